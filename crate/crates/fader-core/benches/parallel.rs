//! Data-parallel hot paths, benched per thread count.
//!
//! With the default `parallel` feature each group runs once per rayon pool
//! size (1 thread vs all available), which shows the parallel overhead and
//! scaling of the same code. Building with `--no-default-features` benches
//! the sequential fallback instead; criterion baselines make the two
//! directly comparable:
//!
//! ```text
//! cargo bench -p fader-core -- --save-baseline par
//! cargo bench -p fader-core --no-default-features -- --baseline par
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use fader_core::fader::{AttributeAutoencoder, AttributeDiscriminator};
use fader_core::metrics::{knn_mutual_information, train_speaker_classifier, ClassifierConfig};
use fader_core::nn::{Tape, Tensor};
use fader_core::rng::SeedTree;
use fader_core::speaker::{generate_corpus, SyntheticCorpusConfig};

fn run_cases(c: &mut Criterion, name: &str, f: impl Fn() + Copy) {
    #[cfg(feature = "parallel")]
    {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        for threads in [1, available] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            c.bench_function(&format!("{name}/threads_{threads}"), |b| {
                b.iter(|| pool.install(f));
            });
            if available == 1 {
                break;
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        c.bench_function(&format!("{name}/sequential"), |b| b.iter(f));
    }
}

fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    use rand::Rng;
    let mut rng = SeedTree::new(seed).rng();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn corpus_generation(c: &mut Criterion) {
    let config = SyntheticCorpusConfig::default();
    run_cases(c, "corpus_generation_40x50", || {
        black_box(generate_corpus(black_box(&config)).unwrap());
    });
}

fn batch_gradients(c: &mut Criterion) {
    let ae = AttributeAutoencoder::init(128, 60, SeedTree::new(1)).unwrap();
    let disc = AttributeDiscriminator::init(60).unwrap();
    let x = random_tensor(2, 256, 128);
    let targets: Vec<f64> = (0..256).map(|i| f64::from(i % 2 == 0)).collect();
    let conditioning = Tensor::new(256, 1, targets.clone()).unwrap();

    run_cases(c, "fader_batch_forward_backward_256", || {
        let mut tape = Tape::new();
        let ae_binding = tape.bind(&ae.params);
        let c_binding = tape.bind(&disc.params);
        let (ew, eb) = (Tape::bound(&ae_binding, "enc.w"), Tape::bound(&ae_binding, "enc.b"));
        let (dw, db) = (Tape::bound(&ae_binding, "dec.w"), Tape::bound(&ae_binding, "dec.b"));
        let (cw, cb) = (Tape::bound(&c_binding, "c.w"), Tape::bound(&c_binding, "c.b"));
        let xid = tape.leaf(x.clone());
        let wid = tape.leaf(conditioning.clone());
        let z = tape.affine(ew, eb, xid).unwrap();
        let joined = tape.concat_cols(z, wid).unwrap();
        let pre = tape.affine(dw, db, joined).unwrap();
        let rec = tape.tanh(pre);
        let recon = tape.mean_abs_err(rec, xid).unwrap();
        let logits = tape.affine(cw, cb, z).unwrap();
        let adv = tape.bce_from_logit(logits, &targets).unwrap();
        let scaled = tape.scale(adv, 0.5);
        let loss = tape.add(recon, scaled).unwrap();
        black_box(tape.backward(loss).unwrap());
    });
}

fn mutual_information(c: &mut Criterion) {
    use rand::Rng;
    let mut rng = SeedTree::new(3).rng();
    let points: Vec<[f64; 2]> = (0..1000)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let labels: Vec<usize> = points.iter().map(|p| usize::from(p[0] > 0.0)).collect();
    run_cases(c, "knn_mutual_information_1000", || {
        black_box(knn_mutual_information(black_box(&points), black_box(&labels), 3).unwrap());
    });
}

fn classifier_training(c: &mut Criterion) {
    let corpus = generate_corpus(&SyntheticCorpusConfig {
        n_speakers: 20,
        utterances_per_speaker: 20,
        embedding_dim: 64,
        seed: 5,
        ..SyntheticCorpusConfig::default()
    })
    .unwrap();
    let indices: Vec<usize> = (0..corpus.len()).collect();
    let x = corpus.stack(&indices);
    let ids = corpus.speaker_ids(&indices);
    let config = ClassifierConfig { iterations: 25, ..ClassifierConfig::default() };
    run_cases(c, "speaker_classifier_25_iters", || {
        black_box(train_speaker_classifier(&x, &ids, 20, &config).unwrap());
    });
}

criterion_group!(
    benches,
    corpus_generation,
    batch_gradients,
    mutual_information,
    classifier_training
);
criterion_main!(benches);
