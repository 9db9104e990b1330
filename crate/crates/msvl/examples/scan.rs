//! Scratch probe (deleted before delivery).
use msvl::metrics::*;
use msvl::util::*;

fn two_model_fixture(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut rng = rng_from_seed(derive_seed(1000, seed));
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let scores_a: Vec<f64> = labels.iter().map(|&l| {
        let base = if l { 0.72 } else { 0.28 };
        (base + 0.62 * (uniform_f64(&mut rng) - 0.5)).clamp(0.0, 1.0)
    }).collect();
    let scores_b: Vec<f64> = labels.iter().map(|_| (0.5 + 0.35 * (uniform_f64(&mut rng) - 0.5)).clamp(0.0, 1.0)).collect();
    (scores_a, scores_b, labels)
}

fn permutation_p(scores_a: &[f64], scores_b: &[f64], labels: &[bool], draws: usize, rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    let auc = |scores: &[f64]| {
        let s: Vec<ScoredSample> = scores.iter().zip(labels).map(|(&s, &l)| ScoredSample::new(s, l).unwrap()).collect();
        auroc(&s).unwrap()
    };
    let observed = (auc(scores_a) - auc(scores_b)).abs();
    let mut at_least = 0usize;
    let mut a = scores_a.to_vec();
    let mut b = scores_b.to_vec();
    for _ in 0..draws {
        a.copy_from_slice(scores_a);
        b.copy_from_slice(scores_b);
        for i in 0..a.len() {
            if uniform_index(rng, 2) == 1 {
                let (x, y) = (a[i], b[i]);
                a[i] = y;
                b[i] = x;
            }
        }
        if (auc(&a) - auc(&b)).abs() >= observed - 1e-12 {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (draws + 1) as f64
}

fn main() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (a, b, l) = two_model_fixture(seed, 20);
        let d = delong_test(&a, &b, &l).unwrap();
        let mut rng = rng_from_seed(derive_seed(8, seed));
        let p = permutation_p(&a, &b, &l, 10_000, &mut rng);
        let gap = (d.p_value - p).abs();
        if gap > worst { worst = gap; }
        println!("seed {seed:2}: DL {:.5} perm {p:.5} gap {gap:.5} (auc {:.3} vs {:.3})", d.p_value, d.auc_a, d.auc_b);
    }
    println!("worst gap over 20 seeds: {worst:.5}");
}
