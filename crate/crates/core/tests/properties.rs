use proptest::collection::vec;
use proptest::prelude::*;

use robosumm_core::controller::{controller_step, ControllerState, Mode};
use robosumm_core::filter::{classify_frame, filter_frames, variance_of_laplacian};
use robosumm_core::io::{parse_frames_jsonl, write_frames_jsonl};
use robosumm_core::service::FrameMessage;
use robosumm_core::summarizer::{
    adapt_threshold, assign_clusters, cluster_count, kmeans_keyframes, select_keyframe, summarize,
    uniform_keyframes, Candidate,
};
use robosumm_core::{
    BodyPart, Classification, ControllerConfig, FeatureVector, FilterConfig, FrameRecord, GrayImage,
    IllPosedReason, Keypoint, LandmarkSet, Observation, SummarizerConfig, FEATURE_DIM, NUM_LANDMARKS,
};

fn timestamps(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..1000.0, vec(0.001f64..500.0, 0..max_len)).prop_map(|(start, gaps)| {
        let mut t = start;
        let mut out = vec![t];
        for g in gaps {
            t += g;
            out.push(t);
        }
        out
    })
}

fn keypoint() -> impl Strategy<Value = Keypoint> {
    (0.0f64..640.0, 0.0f64..480.0, 0.0f64..=1.0).prop_map(|(x, y, c)| Keypoint::new(x, y, c))
}

fn landmarks() -> impl Strategy<Value = LandmarkSet> {
    vec(proptest::option::of(keypoint()), NUM_LANDMARKS).prop_map(|pts| {
        let arr: [Option<Keypoint>; NUM_LANDMARKS] = pts.try_into().unwrap();
        LandmarkSet::new(arr).unwrap()
    })
}

fn feature() -> impl Strategy<Value = Vec<f32>> {
    vec(0.0f32..=1.0, FEATURE_DIM)
}

fn frame_record() -> impl Strategy<Value = FrameRecord> {
    (
        any::<u32>(),
        0.0f64..1e6,
        proptest::option::of(landmarks()),
        proptest::option::of(0.0f64..1e5),
        proptest::option::of(any::<u32>()),
        proptest::option::of(feature()),
    )
        .prop_map(|(id, t, lm, blur, row, feat)| {
            let mut f = FrameRecord::new(u64::from(id), t, 640, 480);
            f.landmarks = lm;
            f.blur_variance = blur;
            f.feat_row = row;
            f.features = feat.map(|v| FeatureVector::new(v).unwrap());
            f
        })
}

fn session_frames(ts: &[f64], feats: &[Vec<f32>]) -> Vec<FrameRecord> {
    ts.iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut f = FrameRecord::new(i as u64, t, 640, 480);
            f.features = Some(FeatureVector::new(feats[i % feats.len()].clone()).unwrap());
            f
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jsonl_round_trip(mut frames in vec(frame_record(), 1..8)) {
        // features travel in a separate file
        for f in &mut frames {
            f.features = None;
        }
        frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        frames.dedup_by_key(|f| f.timestamp.to_bits());
        for (i, f) in frames.iter_mut().enumerate() {
            f.frame_id = i as u64;
        }
        let mut buf = Vec::new();
        write_frames_jsonl(&mut buf, &frames).unwrap();
        let parsed = parse_frames_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(parsed.frames, frames);
    }

    #[test]
    fn frame_message_round_trip(f in frame_record()) {
        let line = serde_json::to_string(&FrameMessage::from(&f)).unwrap();
        let back: FrameMessage = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(back.into_record().unwrap(), f);
    }

    #[test]
    fn filter_accounting_balances(frames in vec(frame_record(), 0..40)) {
        let mut frames = frames;
        for f in &mut frames {
            f.blur_variance.get_or_insert(50.0);
        }
        let (kept, report) = filter_frames(&frames, &FilterConfig::default()).unwrap();
        prop_assert_eq!(report.total, frames.len());
        prop_assert_eq!(report.accepted, kept.len());
        prop_assert!(report.is_balanced());
        prop_assert_eq!(report.rejected_by_reason.len(), IllPosedReason::ALL.len());
    }

    #[test]
    fn blur_gate_is_monotone(f in frame_record(), a in 0.0f64..1000.0, b in 0.0f64..1000.0) {
        let cfg = FilterConfig::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut low = f.clone();
        low.blur_variance = Some(lo);
        let mut high = f;
        high.blur_variance = Some(hi);
        let c_low = classify_frame(&low, None, &cfg).unwrap();
        let c_high = classify_frame(&high, None, &cfg).unwrap();
        if c_low.is_well_posed() {
            prop_assert!(c_high.is_well_posed());
        }
        if c_high == Classification::IllPosed(IllPosedReason::Blurred) {
            prop_assert_eq!(c_low, Classification::IllPosed(IllPosedReason::Blurred));
        }
    }

    #[test]
    fn laplacian_variance_matches_float_oracle(w in 3usize..24, h in 3usize..24, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 56) as u8).collect();
        let img = GrayImage::new(w, h, data.clone()).unwrap();
        let px = |r: usize, c: usize| data[r * w + c] as f64;
        let mut resp = Vec::new();
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                resp.push(px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1) - 4.0 * px(r, c));
            }
        }
        let mean = resp.iter().sum::<f64>() / resp.len() as f64;
        let var = resp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / resp.len() as f64;
        let got = variance_of_laplacian(&img).unwrap();
        prop_assert!((got - var).abs() <= 1e-9 * var.max(1.0));
    }

    #[test]
    fn clusters_are_contiguous_and_ordered(ts in timestamps(200), h in 0.01f64..1000.0) {
        let spans = assign_clusters(&ts, h).unwrap();
        prop_assert_eq!(spans[0].start, 0);
        prop_assert_eq!(spans.last().unwrap().end, ts.len());
        for w in spans.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(ts[w[1].start] - ts[w[0].end - 1] >= h);
        }
        for s in &spans {
            prop_assert!(!s.is_empty());
            for i in s.start + 1..s.end {
                prop_assert!(ts[i] - ts[i - 1] < h);
            }
        }
    }

    #[test]
    fn cluster_count_is_monotone(ts in timestamps(200), a in 0.01f64..1000.0, b in 0.01f64..1000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cluster_count(&ts, lo).unwrap() >= cluster_count(&ts, hi).unwrap());
    }

    #[test]
    fn adapted_threshold_brackets_k(ts in timestamps(200), k in 2usize..20, h0 in 0.1f64..500.0) {
        prop_assume!(ts.len() >= k);
        let a = adapt_threshold(&ts, k, h0, 64).unwrap();
        prop_assert!(cluster_count(&ts, a.h_star).unwrap() >= k);
        prop_assert!(cluster_count(&ts, 2.0 * a.h_star).unwrap() < k);
        // h* lies on the h0 * 2^z lattice
        let z = (a.h_star / h0).log2();
        prop_assert!((z - z.round()).abs() < 1e-9);
    }

    #[test]
    fn keyframe_is_brute_force_argmin(feats in vec(feature(), 1..30)) {
        let candidates: Vec<Candidate<'_>> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| Candidate { frame_id: i as u64, timestamp: i as f64, features: Some(f) })
            .collect();
        let got = select_keyframe(&candidates).unwrap() as usize;
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..FEATURE_DIM).map(|j| feats.iter().map(|f| f[j] as f64).sum::<f64>() / n).collect();
        let dist = |f: &Vec<f32>| f.iter().zip(&mean).map(|(&x, m)| (x as f64 - m).powi(2)).sum::<f64>();
        let best = feats.iter().map(dist).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(dist(&feats[got]), best);
        prop_assert!(feats[..got].iter().all(|f| dist(f) > best));
    }

    #[test]
    fn summary_keyframes_are_diverse(ts in timestamps(150), feats in vec(feature(), 1..4), k in 1usize..10) {
        let frames = session_frames(&ts, &feats);
        let m = summarize(&frames, &SummarizerConfig { k, h0: 60.0, max_adapt_iters: 64 }).unwrap();
        prop_assert_eq!(m.entries.len(), k.min(frames.len()));
        for w in m.entries.windows(2) {
            prop_assert!(w[1].t > w[0].t);
            prop_assert!(w[1].t - w[0].t >= m.h_star);
        }
        let total: usize = m.entries.iter().map(|e| e.cluster_size).sum();
        prop_assert!(total <= frames.len());
    }

    #[test]
    fn baselines_return_k_distinct_frames(ts in timestamps(120), feats in vec(feature(), 1..6), k in 1usize..10, seed in any::<u64>()) {
        let frames = session_frames(&ts, &feats);
        prop_assume!(frames.len() >= k);
        for m in [uniform_keyframes(&frames, k).unwrap(), kmeans_keyframes(&frames, k, seed).unwrap()] {
            prop_assert_eq!(m.entries.len(), k);
            for w in m.entries.windows(2) {
                prop_assert!(w[1].t > w[0].t);
            }
        }
        prop_assert_eq!(kmeans_keyframes(&frames, k, seed).unwrap(), kmeans_keyframes(&frames, k, seed).unwrap());
    }

    #[test]
    fn controller_actions_respect_limits(
        steps in vec(proptest::option::of(landmarks()), 1..80),
        pitch in -15.0f64..=45.0,
    ) {
        let cfg = ControllerConfig::default();
        let mut state = ControllerState { current_pitch: pitch, ..Default::default() };
        for (i, lm) in steps.into_iter().enumerate() {
            let obs = Observation { timestamp: i as f64, width: 640, height: 480, landmarks: lm };
            let (next, a) = controller_step(&state, &obs, &cfg);
            prop_assert!(a.rotate_deg.abs() <= 30.0);
            prop_assert!(a.forward_m >= 0.0 && a.forward_m <= cfg.forward_step_m);
            if let Some(p) = a.pitch_deg {
                prop_assert!((-15.0..=45.0).contains(&p));
            }
            prop_assert_eq!(&a.new_mode, &next.mode);
            state = next;
        }
    }

    #[test]
    fn search_rotates_at_most_two_revolutions(side_x in proptest::option::of(0.0f64..640.0), empties in 1usize..200) {
        let cfg = ControllerConfig::default();
        let mut state = ControllerState::default();
        if let Some(x) = side_x {
            let lm = LandmarkSet::from_parts([(BodyPart::Nose, Keypoint::new(x, 120.0, 0.9))]).unwrap();
            state = controller_step(&state, &Observation { timestamp: 0.0, width: 640, height: 480, landmarks: Some(lm) }, &cfg).0;
        }
        let mut rotated = 0.0;
        let mut turns = 0;
        for i in 0..empties {
            let obs = Observation { timestamp: 1.0 + i as f64, width: 640, height: 480, landmarks: None };
            let (next, a) = controller_step(&state, &obs, &cfg);
            if a.rotate_deg != 0.0 {
                turns += 1;
            }
            rotated += a.rotate_deg.abs();
            state = next;
        }
        prop_assert!(rotated <= 720.0);
        prop_assert_eq!(turns, empties.min(24));
        if empties > 24 {
            let is_idle = matches!(state.mode, Mode::Idle { .. });
            prop_assert!(is_idle);
        }
    }
}
