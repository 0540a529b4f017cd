use dapp::events::{read_dataset, validate_sequence, write_dataset, Dataset, Event, EventError, EventSequence, MarkSpace};
use dapp::simulation::Process;
use proptest::prelude::*;

fn sequence(marks: usize, horizon: f64) -> impl Strategy<Value = EventSequence> {
    (prop::collection::vec((0.0f64..10.0, 0..marks.max(1)), 0..20), any::<bool>()).prop_map(
        move |(mut raw, latent)| {
            raw.sort_by(|a, b| a.0.total_cmp(&b.0));
            raw.dedup_by(|a, b| a.0 == b.0);
            let events = raw
                .into_iter()
                .map(|(t, m)| if marks == 0 { Event::new(t) } else { Event::marked(t, m) })
                .collect();
            let seq = EventSequence::new(events, horizon).unwrap();
            if latent {
                seq.with_latent_scale(horizon / 20.0)
            } else {
                seq
            }
        },
    )
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (0usize..4, 10.0f64..12.0).prop_flat_map(|(marks, horizon)| {
        (prop::collection::vec(sequence(marks, horizon), 0..6), any::<bool>()).prop_map(move |(seqs, truth)| {
            let ds = Dataset::new(seqs, MarkSpace::new(marks));
            if truth {
                ds.with_truth(Process::Hawkes { mu: 1.5, alpha: 0.25, beta: 3.0 })
            } else {
                ds
            }
        })
    })
}

proptest! {
    #[test]
    fn dataset_roundtrip(ds in dataset()) {
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        prop_assert_eq!(&back, &ds);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn generated_sequences_are_valid(seed in 0u64..200) {
        let mut rng = dapp::rng::seeded(seed);
        let s = Process::Hawkes { mu: 3.0, alpha: 0.5, beta: 2.0 }.sample(2.0, &mut rng).unwrap();
        prop_assert!(validate_sequence(s.events(), s.horizon()).is_ok());
    }
}

#[test]
fn invalid_sequences_rejected() {
    assert!(EventSequence::from_times(&[0.5, 0.2], 1.0).is_err());
    assert!(EventSequence::from_times(&[0.5, 1.0], 1.0).is_err());
    assert!(EventSequence::from_times(&[-0.1], 1.0).is_err());
    assert!(EventSequence::from_times(&[0.2, 0.2], 1.0).is_err());
    assert_eq!(
        EventSequence::from_times(&[f64::NAN], 1.0),
        Err(EventError::NonFiniteValue { what: "event time" })
    );
}

#[test]
fn file_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let ds = Dataset::new(vec![EventSequence::from_times(&[0.1, 0.7], 1.0).unwrap()], MarkSpace::TEMPORAL);
    ds.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), ds);
}
