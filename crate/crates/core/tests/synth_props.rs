mod common;

use barnmap::farms::group_farms;
use barnmap::geometry::{interiors_intersect, polygon_area};
use barnmap::synth::{export_scene, generate_scene, import_scene};
use common::small_spec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scenes_group_back_into_their_farms(seed in 0u64..10_000) {
        let gt = generate_scene(&small_spec(seed)).unwrap();
        let barns: Vec<_> = gt.barns.iter().map(|b| (b.id, b.ring.clone())).collect();
        let farms = group_farms(&barns, gt.spec.link_distance_m).unwrap();
        let mut got: Vec<Vec<u64>> = farms.into_iter().map(|f| f.barn_ids).collect();
        let mut want: Vec<Vec<u64>> = gt.farms.iter().map(|f| f.barn_ids.clone()).collect();
        got.iter_mut().chain(want.iter_mut()).for_each(|v| v.sort_unstable());
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
        for f in &gt.farms {
            prop_assert!(f.capacity > 0.0);
            prop_assert_eq!(f.id, *f.barn_ids.iter().min().unwrap());
        }
        for (i, a) in gt.barns.iter().enumerate() {
            prop_assert!(polygon_area(&a.ring).unwrap() > 0.0);
            for b in &gt.barns[i + 1..] {
                prop_assert!(!interiors_intersect(&a.ring, &b.ring));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_round_trips(seed in 0u64..10_000) {
        let a = generate_scene(&small_spec(seed)).unwrap();
        let b = generate_scene(&small_spec(seed)).unwrap();
        prop_assert!(a == b);
        let dir = tempfile::tempdir().unwrap();
        export_scene(&a, dir.path()).unwrap();
        let back = import_scene(dir.path()).unwrap();
        prop_assert_eq!(back.barns.len(), a.barns.len());
        prop_assert_eq!(back.farms.len(), a.farms.len());
        prop_assert!(back.barns.iter().zip(&a.barns).all(|(x, y)| x.id == y.id && x.farm_id == y.farm_id));
    }
}
