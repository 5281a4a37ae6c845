mod common;

use proptest::prelude::*;

use shadowtutor::analytics::{throughput_bounds, throughput_general, traffic_bounds, traffic_general, t_c_bounds, LatencyProfile};
use shadowtutor::distill::AlgoParams;
use shadowtutor::metrics::{class_iou, mean_iou, SegMap};
use shadowtutor::model::{ArchDescriptor, Checkpoint, StudentModel};
use shadowtutor::protocol::Message;
use shadowtutor::scheduler::{next_stride, stride_ratio, Stride};
use shadowtutor::videogen::Frame;

fn params() -> impl Strategy<Value = AlgoParams> {
    (0.05f64..0.95, 1usize..10, 1usize..16, 1usize..10).prop_map(|(threshold, max_updates, min_stride, mult)| AlgoParams {
        threshold,
        max_updates,
        min_stride,
        max_stride: min_stride * mult,
    })
}

fn profile() -> impl Strategy<Value = LatencyProfile> {
    (1e-3f64..0.5, 1e-4f64..0.05, 1e-3f64..0.5, 1e-3f64..1.0, 1e3f64..1e7)
        .prop_map(|(t_si, t_sd, t_ti, t_net, s_net)| LatencyProfile { t_si, t_sd, t_ti, t_net, s_net })
}

fn maps() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1usize..10, 1usize..10, 1u8..6).prop_flat_map(|(h, w, k)| {
        (Just(h), Just(w), prop::collection::vec(0..k, h * w), prop::collection::vec(0..k, h * w))
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

proptest! {
    #[test]
    fn stride_stays_in_range(p in params(), start in 0.0f64..200.0, metrics in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let mut s = Stride::new(start, &p);
        prop_assert!((p.min_stride..=p.max_stride).contains(&s.effective()));
        for m in metrics {
            s = next_stride(s, m, &p).unwrap();
            prop_assert!((p.min_stride..=p.max_stride).contains(&s.effective()));
            prop_assert!(s.value() >= p.min_stride as f64 && s.value() <= p.max_stride as f64);
        }
    }

    #[test]
    fn stride_ratio_is_monotone(thr in 0.01f64..0.99, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(stride_ratio(lo, thr) <= stride_ratio(hi, thr));
        prop_assert!((0.0..=2.0).contains(&stride_ratio(a, thr)));
    }

    #[test]
    fn metric_outside_unit_interval_is_rejected(p in params(), m in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(next_stride(Stride::initial(&p), m, &p).is_err());
    }

    #[test]
    fn mean_iou_matches_set_counting((h, w, pred, label) in maps()) {
        let got = mean_iou(&SegMap::new(h, w, pred.clone()).unwrap(), &SegMap::new(h, w, label.clone()).unwrap()).unwrap();
        prop_assert_eq!(got, common::brute_force_miou(&pred, &label));
    }

    #[test]
    fn class_iou_is_symmetric((h, w, a, b) in maps(), c in 0u8..6) {
        let (a, b) = (SegMap::new(h, w, a).unwrap(), SegMap::new(h, w, b).unwrap());
        prop_assert_eq!(class_iou(&a, &b, c).unwrap(), class_iou(&b, &a, c).unwrap());
    }

    #[test]
    fn self_iou_is_one((h, w, a, _) in maps()) {
        let a = SegMap::new(h, w, a).unwrap();
        prop_assert_eq!(mean_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn frame_messages_round_trip(h in 1usize..12, w in 1usize..12, c in 1usize..4, index: u64, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frame = Frame::new(h, w, c, (0..h * w * c).map(|_| rng.gen()).collect()).unwrap();
        for msg in [
            Message::KeyFrame { index, frame: frame.clone() },
            Message::NaiveFrame { index, frame },
            Message::NaivePrediction { index, labels: (0..h * w).map(|_| rng.gen()).collect() },
        ] {
            let raw = msg.encode();
            prop_assert_eq!(raw.len(), msg.encoded_len());
            prop_assert_eq!(Message::decode(&raw).unwrap(), msg);
        }
    }

    #[test]
    fn truncated_messages_are_rejected(seed in 0u64..1000, cut in 0.0f64..1.0) {
        let student = StudentModel::build(ArchDescriptor::desk_student(3), seed).unwrap();
        let msg = Message::StudentUpdate { metric: 0.5, delta: student.extract_diff() };
        let raw = msg.encode();
        let n = ((raw.len() as f64) * cut) as usize;
        prop_assert!(Message::decode(&raw[..n]).is_err());
        let mut long = raw.clone();
        long.push(0);
        prop_assert!(Message::decode(&long).is_err());
    }

    #[test]
    fn updates_and_checkpoints_round_trip(seed: u64, boundary in 0usize..=6, metric in 0.0f32..=1.0) {
        let arch = ArchDescriptor::desk_student(4).with_freeze_boundary(boundary);
        let student = StudentModel::build(arch, seed).unwrap();
        let msg = Message::StudentUpdate { metric, delta: student.extract_diff() };
        prop_assert_eq!(Message::decode(&msg.encode()).unwrap(), msg);
        let loaded = Checkpoint::of(&student).load().unwrap();
        prop_assert_eq!(&loaded, &student);
        prop_assert_eq!(loaded.freeze_boundary(), boundary);
    }

    #[test]
    fn bounds_are_the_general_forms_at_the_extremes(p in profile(), a in params(), k in 1usize..50) {
        let (lo, hi) = t_c_bounds(&p, &a);
        let (u, min, max) = (a.max_updates, a.min_stride, a.max_stride);
        let (tl, tu) = traffic_bounds(&p, &a);
        let (fl, fu) = throughput_bounds(&p, &a);
        // every key frame at the longest stride, with no distillation and the shortest overlap
        prop_assert!(close(throughput_general(k * max, k, 0, lo, &p, &a).unwrap(), fu));
        // shortest stride, every key frame distilled to the limit with the longest overlap
        prop_assert!(close(throughput_general(k * min, k, k * u, hi, &p, &a).unwrap(), fl));
        prop_assert!(close(traffic_general(k * min, k, 0, lo, &p, &a).unwrap(), tu));
        prop_assert!(close(traffic_general(k * max, k, k * u, hi, &p, &a).unwrap(), tl));
        prop_assert!(fl <= fu && tl <= tu && lo <= hi);
    }

    #[test]
    fn general_forms_lie_within_bounds(
        p in profile(),
        a in params(),
        strides in prop::collection::vec(0.0f64..=1.0, 1..30),
        steps in 0.0f64..=1.0,
        overlap in 0.0f64..=1.0,
    ) {
        let k = strides.len();
        let n: usize = strides.iter().map(|f| a.min_stride + (f * (a.max_stride - a.min_stride) as f64) as usize).sum();
        let d = (steps * (k * a.max_updates) as f64) as usize;
        let (lo, hi) = t_c_bounds(&p, &a);
        let t_c = lo + overlap * (hi - lo);
        let (tl, tu) = traffic_bounds(&p, &a);
        let (fl, fu) = throughput_bounds(&p, &a);
        let tr = traffic_general(n, k, d, t_c, &p, &a).unwrap();
        let fps = throughput_general(n, k, d, t_c, &p, &a).unwrap();
        prop_assert!(common::le(tl, tr) && common::le(tr, tu), "traffic {} not in [{}, {}]", tr, tl, tu);
        prop_assert!(common::le(fl, fps) && common::le(fps, fu), "fps {} not in [{}, {}]", fps, fl, fu);
    }
}
