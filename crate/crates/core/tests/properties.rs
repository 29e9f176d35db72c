use std::sync::Arc;

use proptest::prelude::*;

use hifu_core::kernels::gamma_fn;
use hifu_core::mesh::{parse_mesh, save_mesh};
use hifu_core::output::{parse_vtk_scalars, vtk_string};
use hifu_core::{FemSpace, L1Weights, Mesh, ScenarioConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_weights_telescope(alpha in 0.01f64..0.99, n in 0usize..400) {
        let w = L1Weights::new(alpha, n).unwrap();
        let z = w.as_slice();
        prop_assert_eq!(z.len(), n + 2);
        prop_assert!(z.iter().all(|v| *v > 0.0));
        let exact = ((n + 1) as f64).powf(1.0 - alpha) / gamma_fn(2.0 - alpha).unwrap();
        let sum: f64 = z.iter().sum();
        prop_assert!((sum - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn rectangle_matrices(x0 in -1.0f64..1.0, w in 0.1f64..2.0, hgt in 0.1f64..2.0, nx in 1usize..6, ny in 1usize..6) {
        let mesh = Arc::new(Mesh::structured_rectangle(x0, x0 + w, 0.0, hgt, nx, ny).unwrap());
        let space = FemSpace::new(mesh);
        let ones = vec![1.0; space.dim()];
        let total: f64 = space.mass().mul_vec(&ones).iter().sum();
        prop_assert!((total - w * hgt).abs() <= 1e-12 * w * hgt);
        let k1 = space.assemble_stiffness().mul_vec(&ones);
        prop_assert!(k1.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn mesh_file_round_trip(nx in 1usize..5, ny in 1usize..5, y1 in 0.05f64..1.0) {
        let mesh = Mesh::structured_rectangle(0.0, 1.0, 0.0, y1, nx, ny).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mesh");
        save_mesh(&mesh, &p).unwrap();
        let back = parse_mesh(&std::fs::read_to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back.vertices(), mesh.vertices());
        prop_assert_eq!(back.triangles(), mesh.triangles());
        prop_assert_eq!(back.boundary_edges().len(), mesh.boundary_edges().len());
    }

    #[test]
    fn vtk_round_trip(values in proptest::collection::vec(-1e12f64..1e12, 9)) {
        let mesh = Mesh::structured_rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let text = vtk_string(&mesh, &[("f", values.as_slice())]).unwrap();
        let back = parse_vtk_scalars(&text).unwrap();
        prop_assert_eq!(back.len(), 1);
        for (a, b) in back[0].1.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        // pure serialization
        prop_assert_eq!(text, vtk_string(&mesh, &[("f", values.as_slice())]).unwrap());
    }

    #[test]
    fn config_overrides_survive_round_trip(h in 0.002f64..0.02, steps in 1usize..5000) {
        let o = vec![("mesh.h".to_string(), h.to_string()), ("time.steps".to_string(), steps.to_string())];
        let cfg = ScenarioConfig::from_sources(None, Some("example3"), &o).unwrap();
        prop_assert_eq!(cfg.steps(), steps);
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
