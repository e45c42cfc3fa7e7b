// pilot: memorization sizing for a 32-pair corpus
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicnhg::corpus::{Document, Vocabulary, tokenize_chars};
use topicnhg::nhg::{train_loop, DecodeConfig, NhgConfig, NhgModel};
use topicnhg::nn::Sgd;
use topicnhg::topic_nhg::encode_pair;

fn corpus(seed: u64) -> Vec<Document> {
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..32)
        .map(|_| {
            let tl = rng.gen_range(6..=10);
            let hl = rng.gen_range(3..=8);
            let text: String = (0..tl).map(|_| alphabet[rng.gen_range(0..26)]).collect();
            let headline: String = (0..hl).map(|_| alphabet[rng.gen_range(0..26)]).collect();
            Document { text: tokenize_chars(&text), headline: tokenize_chars(&headline), score: None, topic: None }
        })
        .collect()
}

fn main() {
    let docs = corpus(1234);
    let vocab = Vocabulary::build(&docs, 1).unwrap();
    println!("vocab {} entries", vocab.len());
    let pairs: Vec<_> = docs.iter().map(|d| encode_pair(&vocab, d)).collect();

    for &(e, h, d, lr, steps) in &[
        (16usize, 24usize, 48usize, 0.3f64, 5000usize),
        (16, 24, 48, 0.5, 5000),
        (16, 32, 64, 0.5, 5000),
        (16, 24, 48, 0.5, 2500),
    ] {
        let t0 = std::time::Instant::now();
        let mut cfg = NhgConfig::new(vocab.len(), e, h, d);
        cfg.attn_size = d;
        let mut model = NhgModel::new(cfg, 7).unwrap();
        let losses = train_loop(&mut model, &pairs, &Sgd::new(lr, 5.0), steps, 16, 42).unwrap();
        let tail = &losses[losses.len().saturating_sub(50)..];
        let mean_tail: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
        // mean NLL over the whole corpus
        let total: f64 = pairs.iter().map(|(x, y)| model.sequence_nll(x, y).unwrap()).sum();
        let mean_nll = total / pairs.len() as f64;
        let decode = DecodeConfig { max_len: 12, ..Default::default() };
        let exact = pairs
            .iter()
            .filter(|(x, y)| {
                let out = model.generate_greedy(x, &decode).unwrap();
                out == y[..y.len() - 1]
            })
            .count();
        println!(
            "E={e} H={h} D={d} lr={lr} steps={steps}: tail_loss={mean_tail:.4} mean_nll={mean_nll:.4} exact={exact}/32 ({:.1}s)",
            t0.elapsed().as_secs_f64()
        );
    }
}
