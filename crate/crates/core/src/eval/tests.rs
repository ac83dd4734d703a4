use proptest::prelude::*;

use super::*;

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1)
}

fn det(img: &str, c: ClassLabel, b: BBox, score: f64) -> Detection {
    Detection {
        image_id: img.into(),
        class_label: c,
        bbox: b,
        score,
    }
}

fn gt(img: &str, c: ClassLabel, b: BBox, distance: f64) -> GroundTruthObject {
    GroundTruthObject {
        image_id: img.into(),
        class_label: c,
        bbox: b,
        distance,
        instance_id: 0,
    }
}

#[test]
fn iou_arithmetic() {
    let a = bx(0.0, 0.0, 10.0, 10.0);
    assert_eq!(a.iou(&a), 1.0);
    assert_eq!(a.iou(&bx(20.0, 20.0, 30.0, 30.0)), 0.0);
    assert!((a.iou(&bx(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn match_examples() {
    let g = [bx(0.0, 0.0, 10.0, 10.0)];
    let m = match_detections(&[(g[0], 0.9)], &g, 0.5);
    assert!(m[0].tp);
    let m = match_detections(&[(bx(20.0, 20.0, 30.0, 30.0), 0.9)], &g, 0.5);
    assert!(!m[0].tp && m[0].nearest_gt.is_none());
    let m = match_detections(&[(bx(5.0, 0.0, 15.0, 10.0), 0.9)], &g, 0.5);
    assert!(!m[0].tp && m[0].nearest_gt == Some(0));
}

#[test]
fn each_gt_matched_once() {
    let g = [bx(0.0, 0.0, 10.0, 10.0)];
    let m = match_detections(&[(g[0], 0.5), (g[0], 0.9)], &g, 0.5);
    assert_eq!((m[0].det, m[0].tp), (1, true));
    assert_eq!((m[1].det, m[1].tp), (0, false));
}

#[test]
fn ap_fixtures() {
    assert_eq!(average_precision(&[true, true, true], 3), Some(1.0));
    assert_eq!(average_precision(&[false], 1), Some(0.0));
    assert!((average_precision(&[true, false, true], 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(average_precision(&[], 0), None);
    assert_eq!(average_precision(&[], 4), Some(0.0));
}

#[test]
fn ground_truth_from_planes() {
    let (w, h) = (20usize, 16usize);
    let mut m = MetadataPlanes::empty(w * h);
    assert!(extract_ground_truth("a", &m, w, MIN_INSTANCE_PIXELS).unwrap().objects.is_empty());

    for y in 3..13 {
        for x in 5..15 {
            let i = y * w + x;
            m.instance_id[i] = 7;
            m.class_id[i] = ClassLabel::Car.id();
            m.depth[i] = 42.0 + (x + y) as f32;
        }
    }
    m.depth[3 * w + 5] = 42.0;
    let set = extract_ground_truth("a", &m, w, MIN_INSTANCE_PIXELS).unwrap();
    assert_eq!(set.objects.len(), 1);
    let o = &set.objects[0];
    assert_eq!(o.bbox, bx(5.0, 3.0, 14.0, 12.0));
    assert_eq!((o.distance, o.class_label, o.instance_id), (42.0, ClassLabel::Car, 7));

    // Second car instance and a three-pixel sliver below the size cut.
    for x in 16..19 {
        for y in 0..2 {
            let i = y * w + x;
            m.instance_id[i] = 9;
            m.class_id[i] = ClassLabel::Car.id();
            m.depth[i] = 10.0;
        }
    }
    for x in 0..3 {
        let i = 15 * w + x;
        m.instance_id[i] = 11;
        m.class_id[i] = ClassLabel::Pedestrian.id();
        m.depth[i] = 5.0;
    }
    let set = extract_ground_truth("a", &m, w, MIN_INSTANCE_PIXELS).unwrap();
    assert_eq!(set.objects.len(), 2);
    assert_ne!(set.objects[0].bbox, set.objects[1].bbox);
    assert_eq!(set.objects[1].bbox, bx(16.0, 0.0, 18.0, 1.0));
    assert_eq!(set.discarded, vec![(11, 3)]);

    m.class_id[4 * w + 6] = ClassLabel::Cyclist.id();
    assert!(matches!(
        extract_ground_truth("a", &m, w, MIN_INSTANCE_PIXELS),
        Err(EvalError::InconsistentClass { instance_id: 7, .. })
    ));
}

#[test]
fn distance_bins() {
    let c = ClassLabel::Car;
    let gts: Vec<_> = (0..4).map(|k| gt("i", c, bx(k as f64 * 20.0, 0.0, k as f64 * 20.0 + 10.0, 10.0), 15.0)).collect();
    let dets: Vec<_> = gts.iter().map(|g| det("i", c, g.bbox, 0.8)).collect();
    let r = ap_by_distance(&dets, &gts, &[0.0, 10.0, 20.0, 30.0], 0.5).unwrap();
    let bins = &r.classes[&c];
    assert_eq!(bins.iter().map(|b| b.n_gt).collect::<Vec<_>>(), vec![0, 4, 0]);
    assert_eq!(bins[1].ap, Some(1.0));
    assert_eq!(bins[0].ap, None);
    assert!(ap_by_distance(&dets, &gts, &[0.0, 10.0, 10.0], 0.5).is_err());
}

#[test]
fn zero_overlap_detections_are_unassigned() {
    let c = ClassLabel::Pedestrian;
    let gts = vec![gt("i", c, bx(0.0, 0.0, 10.0, 10.0), 12.0)];
    let dets = vec![
        det("i", c, bx(0.0, 0.0, 10.0, 10.0), 0.9),
        det("i", c, bx(3.0, 0.0, 13.0, 10.0), 0.8),
        det("i", c, bx(50.0, 50.0, 60.0, 60.0), 0.95),
    ];
    let r = ap_by_distance(&dets, &gts, &default_bin_edges(), 0.5).unwrap();
    assert_eq!(r.unassigned_fp[&c], 1);
    assert_eq!(r.classes[&c][1].n_det, 2);
    assert_eq!(r.classes[&c][1].ap, Some(1.0));
    // Plain AP counts the zero-overlap false positive ranked first.
    assert_eq!(evaluate(&dets, &gts, 0.5)[&c], Some(0.5));
}

#[test]
fn csv_rows() {
    let c = ClassLabel::Car;
    let gts = vec![gt("i", c, bx(0.0, 0.0, 4.0, 4.0), 5.0)];
    let dets = vec![det("i", c, bx(0.0, 0.0, 4.0, 4.0), 0.5)];
    let r = ap_by_distance(&dets, &gts, &[0.0, 10.0, 20.0], 0.5).unwrap();
    assert_eq!(ap_csv(&r), "bin_center,class,ap,n_gt\n5,car,1.000000,1\n15,car,,0\n");
}

#[test]
fn text_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let dets = vec![det("s1", ClassLabel::Car, bx(1.0, 2.0, 30.5, 40.0), 0.75)];
    let gts = vec![gt("s1", ClassLabel::Pedestrian, bx(3.0, 4.0, 9.0, 20.0), 17.25)];
    write_detections(dir.path().join("d.txt"), &dets).unwrap();
    write_ground_truth(dir.path().join("g.txt"), &gts).unwrap();
    assert_eq!(read_detections(dir.path().join("d.txt")).unwrap(), dets);
    assert_eq!(read_ground_truth(dir.path().join("g.txt")).unwrap(), gts);

    let e = parse_detections("# header\n\ns1 car 0 0 1 1 0.5\ns1 car 0 0 1\n").unwrap_err();
    assert!(matches!(e, EvalError::Parse { line: 4, .. }), "{e}");
    let e = parse_detections("s1 car 0 0 1 1 0.5\ns1 car 0 0 1 1 1.5\n").unwrap_err();
    assert!(matches!(e, EvalError::Parse { line: 2, .. }), "{e}");
    assert!(parse_detections("s1 bus 0 0 1 1 0.5").is_err());
    assert!(parse_ground_truth("s1 car 0 0 1 1 0").is_err());
}

/// Exhaustive oracle: among all injective assignments of detections to
/// ground truth with IoU ≥ threshold, greedy-by-score yields the one whose
/// IoU vector (in score order, 0 for unmatched) is lexicographically
/// largest.
fn exhaustive_flags(dets: &[(BBox, f64)], gts: &[BBox], thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    fn rec(k: usize, order: &[usize], dets: &[(BBox, f64)], gts: &[BBox], thr: f64, used: &mut Vec<bool>, cur: &mut Vec<f64>, best: &mut Option<Vec<f64>>) {
        if k == order.len() {
            if best.as_ref().is_none_or(|b| cur.as_slice() > b.as_slice()) {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push(0.0);
        rec(k + 1, order, dets, gts, thr, used, cur, best);
        cur.pop();
        for g in 0..gts.len() {
            let iou = dets[order[k]].0.iou(&gts[g]);
            if !used[g] && iou >= thr {
                used[g] = true;
                cur.push(iou);
                rec(k + 1, order, dets, gts, thr, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let mut best = None;
    rec(0, &order, dets, gts, thr, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
    best.unwrap().into_iter().map(|v| v > 0.0).collect()
}

fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<BBox>> {
    prop::collection::vec((0.0..20.0f64, 0.0..20.0f64, 2.0..12.0f64, 2.0..12.0f64), n)
        .prop_map(|v| v.into_iter().map(|(x, y, w, h)| bx(x, y, x + w, y + h)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn greedy_matches_exhaustive(
        (gts, dets) in (0usize..=6).prop_flat_map(|total| (0..=total).prop_flat_map(move |ng| (boxes(ng..ng + 1), boxes(total - ng..total - ng + 1)))),
        scores in prop::collection::vec(0.0..1.0f64, 6),
        thr in 0.1..0.7f64,
    ) {
        let ds: Vec<(BBox, f64)> = dets.iter().zip(&scores).map(|(b, s)| (*b, *s)).collect();
        let greedy: Vec<bool> = match_detections(&ds, &gts, thr).iter().map(|m| m.tp).collect();
        let oracle = exhaustive_flags(&ds, &gts, thr);
        prop_assert_eq!(&greedy, &oracle);
        prop_assert_eq!(average_precision(&greedy, gts.len()), average_precision(&oracle, gts.len()));
    }

    #[test]
    fn ap_invariant_to_monotone_score_map(gts in boxes(1..6), dets in boxes(1..8), scores in prop::collection::vec(0.01..1.0f64, 8)) {
        let c = ClassLabel::Car;
        let g: Vec<_> = gts.iter().map(|b| gt("i", c, *b, 10.0)).collect();
        let d: Vec<_> = dets.iter().zip(&scores).map(|(b, s)| det("i", c, *b, *s)).collect();
        let mapped: Vec<_> = d.iter().map(|x| Detection { score: x.score.powi(3) * 0.5, ..x.clone() }).collect();
        prop_assert_eq!(evaluate(&d, &g, 0.5), evaluate(&mapped, &g, 0.5));
    }

    #[test]
    fn duplicate_of_match_never_raises_ap(gts in boxes(1..6), extra in boxes(0..4), jitter in prop::collection::vec(-3.0..3.0f64, 6), scores in prop::collection::vec(0.01..1.0f64, 10), pick in 0usize..8) {
        let c = ClassLabel::Car;
        let g: Vec<_> = gts.iter().map(|b| gt("i", c, *b, 10.0)).collect();
        let dets: Vec<BBox> = gts.iter().zip(&jitter).map(|(b, j)| bx(b.x0 + j, b.y0, b.x1 + j, b.y1)).chain(extra).collect();
        let mut d: Vec<_> = dets.iter().zip(&scores).map(|(b, s)| det("i", c, *b, *s)).collect();
        let gb: Vec<BBox> = gts.clone();
        let pairs = |d: &[Detection]| d.iter().map(|x| (x.bbox, x.score)).collect::<Vec<_>>();
        let matched: Vec<usize> = match_detections(&pairs(&d), &gb, 0.5).iter().filter(|m| m.tp).map(|m| m.det).collect();
        prop_assume!(!matched.is_empty());
        let before = evaluate(&d, &g, 0.5)[&c].unwrap();
        d.push(d[matched[pick % matched.len()]].clone());
        let after = match_detections(&pairs(&d), &gb, 0.5);
        prop_assume!(after.iter().any(|m| m.det == d.len() - 1 && !m.tp));
        prop_assert!(evaluate(&d, &g, 0.5)[&c].unwrap() <= before + 1e-12);
    }

    #[test]
    fn single_bin_equals_plain_ap(gts in boxes(1..6), scores in prop::collection::vec(0.01..1.0f64, 6), jitter in prop::collection::vec(-2.0..2.0f64, 6)) {
        // Every detection overlaps some ground truth, so none is unassigned.
        let c = ClassLabel::Cyclist;
        let g: Vec<_> = gts.iter().enumerate().map(|(k, b)| gt("i", c, *b, 5.0 + 20.0 * k as f64)).collect();
        let d: Vec<_> = gts.iter().zip(&scores).zip(&jitter).map(|((b, s), j)| det("i", c, bx(b.x0 + j, b.y0, b.x1 + j, b.y1), *s)).collect();
        let r = ap_by_distance(&d, &g, &[0.0, 1000.0], 0.5).unwrap();
        prop_assert_eq!(r.unassigned_fp[&c], 0);
        prop_assert_eq!(r.classes[&c][0].ap, evaluate(&d, &g, 0.5)[&c]);
    }
}
