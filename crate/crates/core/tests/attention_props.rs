use dapp::attention::{Attention, Dapp, FeatureDraw, ModelConfig, ModelParams};
use dapp::events::{Event, EventSequence, MarkSpace};
use dapp::likelihood::{sequence_loglik, IntegrationConfig};
use proptest::prelude::*;

fn model(marks: usize, seed: u64) -> (ModelParams, FeatureDraw) {
    let mut rng = dapp::rng::seeded(seed);
    let cfg = ModelConfig {
        hidden: vec![16, 16],
        ..ModelConfig::default()
    };
    let params = ModelParams::init(cfg, MarkSpace::new(marks), 2.0, &mut rng);
    let draw = FeatureDraw::sample(&params, 64, &mut rng);
    (params, draw)
}

fn history(marks: usize) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::btree_map(0u32..100_000, 0..marks.max(1), 1..25).prop_map(move |m| {
        m.into_iter()
            .map(|(k, mark)| {
                let t = k as f64 / 50_000.0;
                if marks == 0 { Event::new(t) } else { Event::marked(t, mark) }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_a_distribution(h in history(2), seed in 0u64..8, head in 0usize..2) {
        let (p, d) = model(2, seed);
        let m = Dapp::new(&p, &d).unwrap();
        let q = Event::marked(2.5, 1);
        let w = m.normalized_scores(&q, &h, head).unwrap();
        prop_assert_eq!(w.len(), h.len());
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_is_permutation_invariant(h in history(0), seed in 0u64..8, rot in 0usize..25) {
        let (p, d) = model(0, seed);
        let m = Dapp::new(&p, &d).unwrap();
        let q = Event::new(2.5);
        let mut shuffled = h.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        for head in 0..2 {
            let a = m.attention_head(&q, &h, head);
            let b = m.attention_head(&q, &shuffled, head);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn large_budget_matches_offline(h in history(2), seed in 0u64..8, extra in 0usize..5) {
        let (p, d) = model(2, seed);
        let seq = EventSequence::new(h, 2.0).unwrap();
        let offline = Dapp::new(&p, &d).unwrap();
        let online = Dapp::new(&p, &d).unwrap().with_attention(Attention::Online { eta: seq.len() + extra });
        let ic = IntegrationConfig::default();
        prop_assert_eq!(
            sequence_loglik(&offline, &seq, &ic).unwrap().to_bits(),
            sequence_loglik(&online, &seq, &ic).unwrap().to_bits()
        );
        prop_assert_eq!(offline.score_matrix(&seq, 0), online.score_matrix(&seq, 0));
    }

    #[test]
    fn online_rows_respect_budget(h in history(0), seed in 0u64..8, eta in 1usize..6) {
        let (p, d) = model(0, seed);
        let seq = EventSequence::new(h, 2.0).unwrap();
        let m = Dapp::new(&p, &d).unwrap().with_attention(Attention::Online { eta });
        for row in m.score_matrix(&seq, 1) {
            let support = row.iter().filter(|&&x| x > 0.0).count();
            prop_assert!(support <= eta + 1);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_history_has_no_scores() {
    let (p, d) = model(0, 1);
    let m = Dapp::new(&p, &d).unwrap();
    assert!(m.normalized_scores(&Event::new(0.5), &[], 0).is_err());
    let expected = p.base_intensity(None) + dapp::autodiff::softplus(p.output_bias.item());
    assert!((m.offline_intensity(0.5, None, &[]) - expected).abs() < 1e-12);
}
