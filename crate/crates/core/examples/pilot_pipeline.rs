// pilot: scaled-down Table 3/4 analogue sizing
use std::time::Instant;
use topicnhg::corpus::{filter_by_score, Vocabulary};
use topicnhg::lda::fit_gibbs;
use topicnhg::nhg::{train_loop, DecodeConfig, NhgConfig, NhgModel};
use topicnhg::nn::Sgd;
use topicnhg::rouge::{evaluate, ScoredPair};
use topicnhg::synth::{self, planted_topic, SynthConfig};
use topicnhg::topic_nhg::{encode_pair, TopicNhgModel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let baseline_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20000);
    let topic_steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let shared_frac: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.5);

    let t0 = Instant::now();
    let synth_cfg = SynthConfig { shared_frac, ..SynthConfig::default() };
    let (train, test) = synth::generate(&synth_cfg).unwrap();
    let test = filter_by_score(&test, 3);
    let vocab = Vocabulary::build(&train, 1).unwrap();
    println!("corpus: {} train, {} test, vocab {}", train.len(), test.len(), vocab.len());

    let lda = fit_gibbs(&train, &vocab, 3, 50.0 / 3.0, 0.01, 200, 0).unwrap();
    // LDA label accuracy up to permutation: majority planted topic per label
    let mut label_of_planted = [[0usize; 3]; 3];
    let train_labels: Vec<usize> = train
        .iter()
        .map(|d| lda.assign_topic_ids(&vocab.encode(&d.text)))
        .collect();
    for (d, &l) in train.iter().zip(&train_labels) {
        label_of_planted[planted_topic(d).unwrap()][l] += 1;
    }
    println!("lda fit at {:.1}s; planted-vs-label counts: {label_of_planted:?}", t0.elapsed().as_secs_f64());

    let pairs: Vec<_> = train.iter().map(|d| encode_pair(&vocab, d)).collect();
    let mut cfg = NhgConfig::new(vocab.len(), 16, 24, 48);
    cfg.attn_size = 48;
    let mut baseline = NhgModel::new(cfg, 7).unwrap();
    let opt = Sgd::new(lr, 5.0);
    let losses = train_loop(&mut baseline, &pairs, &opt, baseline_steps, batch, 42).unwrap();
    println!(
        "baseline trained at {:.1}s; final loss {:.4}",
        t0.elapsed().as_secs_f64(),
        losses.last().unwrap()
    );

    let mut topic_model = TopicNhgModel::fork(&baseline, 3, lda, true).unwrap();
    for l in 0..3 {
        let docs_l: Vec<_> = train
            .iter()
            .zip(&train_labels)
            .filter(|(_, &lab)| lab == l)
            .map(|(d, _)| d.clone())
            .collect();
        let losses = topic_model
            .train_topic(l, &docs_l, &vocab, &opt, topic_steps, batch, 42 + l as u64)
            .unwrap();
        println!(
            "topic {l}: {} docs, final loss {:.4} at {:.1}s",
            docs_l.len(),
            losses.last().unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }

    let decode = DecodeConfig { max_len: 8, ..Default::default() };
    let mut base_pairs: Vec<ScoredPair> = Vec::new();
    let mut topic_pairs: Vec<ScoredPair> = Vec::new();
    for d in &test {
        let x = vocab.encode(&d.text);
        let label = topic_model.lda().assign_topic_ids(&x);
        let b = baseline.generate_greedy(&x, &decode).unwrap();
        let (t, routed) = topic_model.generate(&x, &decode).unwrap();
        assert_eq!(label, routed);
        base_pairs.push((vocab.decode(&b).unwrap(), d.headline.clone(), Some(label)));
        topic_pairs.push((vocab.decode(&t).unwrap(), d.headline.clone(), Some(label)));
    }
    let base_report = evaluate(&base_pairs).unwrap();
    let topic_report = evaluate(&topic_pairs).unwrap();
    println!("=== baseline ===\n{}", base_report.to_table());
    println!("=== topicnhg ===\n{}", topic_report.to_table());
    println!(
        "rouge-1 gap: {:.2} points; total {:.1}s",
        topic_report.rouge1_f - base_report.rouge1_f,
        t0.elapsed().as_secs_f64()
    );
}
