use std::time::{Duration, Instant};

use seglearn::decoder::beam_search_with_stats;
use seglearn::{CharVocab, Model, ModelConfig};

fn model() -> Model {
    let entries = CharVocab::specials()
        .entries()
        .map(|(n, c)| (n.to_string(), c))
        .chain("abcdefghijklmnopqrst".chars().map(|c| (c.to_string(), 1)))
        .collect();
    Model::new(ModelConfig::default(), CharVocab::from_entries(entries).unwrap(), 3).unwrap()
}

fn best_of(runs: usize, mut f: impl FnMut()) -> Duration {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

#[test]
fn decode_cost_is_linear_in_length() {
    let m = model();
    let ids = |n: usize| -> Vec<usize> { (0..n).map(|i| 3 + (i * 7) % 20).collect() };
    let short = m.inputs(&ids(100));
    let long = m.inputs(&ids(200));

    let (_, s) = beam_search_with_stats(&m, &short, 4, 4).unwrap();
    let (_, l) = beam_search_with_stats(&m, &long, 4, 4).unwrap();
    assert_eq!(s.compositions, 394);
    assert_eq!(l.compositions, 794);
    assert_eq!(l.lstm_steps - s.lstm_steps, 4 * 100);

    let t_short = best_of(7, || {
        beam_search_with_stats(&m, &short, 4, 4).unwrap();
    });
    let t_long = best_of(7, || {
        beam_search_with_stats(&m, &long, 4, 4).unwrap();
    });
    let ratio = t_long.as_secs_f64() / t_short.as_secs_f64();
    assert!(ratio <= 2.5, "200 chars took {ratio:.2}x as long as 100 chars");
}
