use empo_core::memory::{Tip, TipMemory, TIP_CAPACITY};
use empo_oracles::fixtures::{clustered_key, random_direction, random_tip};
use empo_oracles::oracle_retrieve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn retrieval_equals_the_full_scan_oracle_on_1000_buffers() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut nonempty, mut partial) = (0, 0);
    for case in 0..1000 {
        let centers: Vec<Vec<f64>> = (0..rng.gen_range(1..4)).map(|_| random_direction(&mut rng)).collect();
        let mut mem = TipMemory::new();
        for _ in 0..rng.gen_range(0..=1200) {
            mem.add(random_tip(&mut rng, &centers, 1500)).unwrap();
        }
        assert!(mem.len() <= TIP_CAPACITY);
        let entries: Vec<Tip<f64>> = mem.entries().cloned().collect();
        let query = clustered_key(&mut rng, &centers, 0.2);
        let got: Vec<Tip<f64>> = mem.retrieve(&query).into_iter().cloned().collect();
        let want = oracle_retrieve(&entries, &query);
        assert_eq!(got, want, "buffer {case}");
        nonempty += usize::from(!want.is_empty());
        let near = |c: f64| entries.iter().filter(|t| cos(&t.key, &query) > c).count();
        partial += usize::from(near(0.4) > near(0.5));
    }
    assert!(nonempty > 500, "fixture too sparse: {nonempty}");
    assert!(partial > 100, "threshold rarely splits a cluster: {partial}");
}
