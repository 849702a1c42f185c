use super::*;
use ndarray::Array3;
use proptest::prelude::*;

fn vol(shape: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> u16) -> LabelVolume {
    LabelVolume::new(
        Array3::from_shape_fn(shape, |(z, y, x)| f(z, y, x)),
        [2.0, 1.0, 0.5],
        [0.0; 3],
    )
    .unwrap()
}

#[test]
fn taxonomy_layout() {
    let t = AnatomyTaxonomy::v1();
    assert_eq!(t.entries().len(), 34);
    assert_eq!(t.get(0).unwrap().group, AnatomyGroup::Background);
    assert_eq!(t.group_ids(AnatomyGroup::Pelvic), vec![1, 2, 3]);
    assert_eq!(t.group_ids(AnatomyGroup::Organ), vec![4, 5, 6, 7, 8]);
    let v = t.group_ids(AnatomyGroup::Vertebra);
    assert_eq!(v.len(), 25);
    assert_eq!(t.get(9).unwrap().name, "C1");
    assert_eq!(t.get(33).unwrap().name, "L6");
    assert_eq!(t.by_name("left kidney").unwrap().id, 7);
    assert_eq!(AnatomyTaxonomy::from_json(&t.to_json()).unwrap(), t);
}

#[test]
fn taxonomy_rejects_gaps() {
    let mut entries: Vec<serde_json::Value> = serde_json::from_str(TAXONOMY_V1_JSON).unwrap();
    entries.remove(5);
    assert!(AnatomyTaxonomy::from_json(&serde_json::to_string(&entries).unwrap()).is_err());
}

#[test]
fn remap_all_zero() {
    let map = DatasetLabelMap::identity("x", ClassSet::from_ids([4]).unwrap());
    let v = vol((3, 3, 3), |_, _, _| 0);
    assert_eq!(remap_to_universal(&v, &map).unwrap(), v);
}

#[test]
fn remap_kidney_blobs() {
    let map = DatasetLabelMap::from_json(
        r#"{"dataset_id":"kits","remap":{"1":7,"2":8},"annotated":[7,8]}"#,
    )
    .unwrap();
    let raw = vol((4, 4, 4), |z, _, x| match (z < 2, x < 2) {
        (true, true) => 1,
        (false, false) => 2,
        _ => 0,
    });
    let out = remap_to_universal(&raw, &map).unwrap();
    for (r, o) in raw.voxels.iter().zip(out.voxels.iter()) {
        assert_eq!(*o, [0, 7, 8][*r as usize]);
    }
    assert_eq!(out.spacing, raw.spacing);
    assert_eq!(out.origin, raw.origin);
    assert_eq!(DatasetLabelMap::from_json(&map.to_json()).unwrap(), map);
}

#[test]
fn remap_identity_unchanged() {
    let map = DatasetLabelMap::identity("u", ClassSet::from_ids(1..=33).unwrap());
    let v = vol((3, 4, 5), |z, y, x| ((z * 20 + y * 5 + x) % 34) as u16);
    assert_eq!(remap_to_universal(&v, &map).unwrap(), v);
}

#[test]
fn remap_unmapped_names_label_and_count() {
    let map = DatasetLabelMap::new("d", [(1, 4)].into(), ClassSet::from_ids([4]).unwrap()).unwrap();
    let v = vol((2, 2, 2), |z, y, _| if z == 0 && y == 0 { 3 } else { 1 });
    let err = remap_to_universal(&v, &map).unwrap_err();
    assert_eq!(err.kind(), "data");
    let msg = err.to_string();
    assert!(msg.contains("label 3") && msg.contains("2 voxels"), "{msg}");
}

#[test]
fn label_map_invariants() {
    let s = ClassSet::from_ids([4, 5]).unwrap();
    assert!(DatasetLabelMap::new("d", [(1, 4), (2, 4)].into(), s).is_err());
    assert!(DatasetLabelMap::new("d", [(1, 9)].into(), s).is_err());
    assert!(ClassSet::from_ids([0]).is_err());
    assert!(ClassSet::from_ids([34]).is_err());
}

#[test]
fn fusion_examples() {
    let s = ClassSet::from_ids([4]).unwrap();
    assert_eq!(fuse_voxel(9, 4, s), 4);
    assert_eq!(fuse_voxel(9, 0, s), 9);
    assert_eq!(fuse_voxel(4, 0, s), 0);
}

/// Exhaustive over gt ∈ {0, in S}, pseudo ∈ {0, in S, not in S}.
#[test]
fn fusion_truth_table() {
    let s = ClassSet::from_ids([4, 7]).unwrap();
    let oracle = |p: u16, g: u16| -> u16 {
        match (g, s.contains(p)) {
            (0, true) => 0,
            (0, false) => p,
            (g, _) => g,
        }
    };
    for g in [0u16, 4, 7] {
        for p in [0u16, 4, 7, 9, 1] {
            assert_eq!(fuse_voxel(p, g, s), oracle(p, g), "gt {g} pseudo {p}");
        }
    }
}

#[test]
fn fusion_errors() {
    let s = ClassSet::from_ids([4]).unwrap();
    let a = vol((2, 2, 2), |_, _, _| 0);
    let b = vol((2, 2, 3), |_, _, _| 0);
    assert_eq!(fuse_pseudo_with_gt(&a, &b, s).unwrap_err().kind(), "data");
    let mut shifted = a.clone();
    shifted.origin[1] = 1.0;
    assert!(fuse_pseudo_with_gt(&a, &shifted, s).is_err());
    let stray = vol((2, 2, 2), |z, _, _| if z == 0 { 5 } else { 0 });
    let err = fuse_pseudo_with_gt(&a, &stray, s).unwrap_err();
    assert!(err.to_string().contains("class 5"), "{err}");
}

#[test]
fn validate_fused_reports() {
    let bg = vol((2, 3, 4), |_, _, _| 0);
    let r = validate_fused(&bg);
    assert_eq!(r.histogram, [(0u16, 24usize)].into());
    assert!(r.is_valid());

    let all = vol((2, 17, 1), |z, y, _| (z * 17 + y) as u16);
    let r = validate_fused(&all);
    assert_eq!(r.histogram.len(), 34);
    assert!(r.is_valid());
    for c in &r.classes {
        assert_eq!(c.volume_mm3, c.voxels as f64 * 2.0 * 1.0 * 0.5);
    }

    let bad = vol((1, 1, 3), |_, _, x| [0, 34, 40][x]);
    let r = validate_fused(&bad);
    assert_eq!(r.out_of_range, 2);
    assert!(!r.is_valid());
    assert_eq!(r.classes.len(), 1);
}

fn class_set() -> impl Strategy<Value = ClassSet> {
    proptest::collection::vec(1u16..=33, 0..8).prop_map(|ids| ClassSet::from_ids(ids).unwrap())
}

fn volume_pair(s: ClassSet) -> impl Strategy<Value = (LabelVolume, LabelVolume)> {
    let ids = s.ids();
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(move |(d, h, w)| {
        let n = d * h * w;
        let gt_choices: Vec<u16> = std::iter::once(0).chain(ids.iter().copied()).collect();
        (
            proptest::collection::vec(0u16..=33, n),
            proptest::collection::vec(proptest::sample::select(gt_choices), n),
        )
            .prop_map(move |(p, g)| {
                let mk = |v: Vec<u16>| {
                    LabelVolume::from_voxels(Array3::from_shape_vec((d, h, w), v).unwrap())
                };
                (mk(p), mk(g))
            })
    })
}

fn case() -> impl Strategy<Value = (ClassSet, LabelVolume, LabelVolume)> {
    class_set().prop_flat_map(|s| volume_pair(s).prop_map(move |(p, g)| (s, p, g)))
}

proptest! {
    #[test]
    fn fusion_idempotent((s, p, g) in case()) {
        let once = fuse_pseudo_with_gt(&p, &g, s).unwrap();
        let twice = fuse_pseudo_with_gt(&once, &g, s).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn fusion_gt_dominates((s, p, g) in case()) {
        let out = fuse_pseudo_with_gt(&p, &g, s).unwrap();
        for (o, gv) in out.voxels.iter().zip(g.voxels.iter()) {
            if *gv != 0 {
                prop_assert_eq!(o, gv);
            }
        }
    }

    #[test]
    fn fusion_excludes_annotated_pseudo((s, p, g) in case()) {
        let out = fuse_pseudo_with_gt(&p, &g, s).unwrap();
        for (o, gv) in out.voxels.iter().zip(g.voxels.iter()) {
            if s.contains(*o) {
                prop_assert_eq!(o, gv);
            }
        }
    }

    #[test]
    fn fusion_commutes_with_crop((s, p, g) in case(), a in any::<[u8; 6]>()) {
        let shape = p.shape();
        let start: [usize; 3] = std::array::from_fn(|i| a[i] as usize % shape[i]);
        let ext: [usize; 3] = std::array::from_fn(|i| 1 + a[i + 3] as usize % (shape[i] - start[i]));
        let fused_then_crop = fuse_pseudo_with_gt(&p, &g, s).unwrap().crop(start, ext).unwrap();
        let crop_then_fused =
            fuse_pseudo_with_gt(&p.crop(start, ext).unwrap(), &g.crop(start, ext).unwrap(), s).unwrap();
        prop_assert_eq!(fused_then_crop, crop_then_fused);
    }
}
