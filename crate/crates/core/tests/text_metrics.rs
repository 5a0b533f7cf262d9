use aia_core::data::{PiiRecord, PiiType};
use aia_core::metrics::{asr_exact_match, bleu_n, perplexity_from_logits, rouge_l, rouge_n};
use aia_core::Tensor;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    text: Vec<Case>,
    ppl: Vec<PplCase>,
    asr: Vec<AsrCase>,
}

#[derive(Deserialize)]
struct Case {
    candidate: String,
    reference: String,
    rouge1: f64,
    rouge2: f64,
    #[serde(rename = "rougeL")]
    rouge_l: f64,
    bleu1: f64,
    bleu2: f64,
    bleu4: f64,
}

#[derive(Deserialize)]
struct Block {
    logits: Vec<Vec<f64>>,
    targets: Vec<usize>,
}

#[derive(Deserialize)]
struct PplCase {
    blocks: Vec<Block>,
    ppl: f64,
}

#[derive(Deserialize)]
struct AsrCase {
    generations: Vec<String>,
    truths: Vec<String>,
    asr: f64,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/text_metrics.json")).unwrap()
}

fn record_with_email(email: &str) -> PiiRecord {
    PiiRecord {
        name: "Ann Lee".into(),
        phone: "555-0100".into(),
        email: email.into(),
        fax: "555-0101".into(),
        birthday: "1990-01-01".into(),
        ssn: "123-45-6789".into(),
        address: "1 Main St".into(),
        job: "clerk".into(),
        bitcoin: "1abc".into(),
        uuid: "00000000".into(),
        rendered: String::new(),
    }
}

/// Reference values from scripts/metric_fixture.py (brute-force LCS).
#[test]
fn matches_brute_force_fixture() {
    let cases = fixture().text;
    assert_eq!(cases.len(), 20);
    for c in &cases {
        let (a, b) = (c.candidate.as_str(), c.reference.as_str());
        let got = [
            rouge_n(a, b, 1).unwrap(),
            rouge_n(a, b, 2).unwrap(),
            rouge_l(a, b),
            bleu_n(a, b, 1).unwrap(),
            bleu_n(a, b, 2).unwrap(),
            bleu_n(a, b, 4).unwrap(),
        ];
        let want = [c.rouge1, c.rouge2, c.rouge_l, c.bleu1, c.bleu2, c.bleu4];
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            assert!((g - w).abs() < 5e-5, "{a:?} / {b:?} metric {i}: {g} vs {w}");
        }
    }
}

#[test]
fn perplexity_matches_fixture() {
    let cases = fixture().ppl;
    assert_eq!(cases.len(), 20);
    for c in &cases {
        let logits: Vec<Tensor> = c
            .blocks
            .iter()
            .map(|b| Tensor::new(vec![b.logits.len(), b.logits[0].len()], b.logits.concat()).unwrap())
            .collect();
        let targets: Vec<Vec<usize>> = c.blocks.iter().map(|b| b.targets.clone()).collect();
        let got = perplexity_from_logits(&logits, &targets).unwrap();
        assert!((got - c.ppl).abs() < 5e-5 * c.ppl.max(1.0), "{got} vs {}", c.ppl);
    }
}

#[test]
fn asr_matches_fixture() {
    let cases = fixture().asr;
    assert_eq!(cases.len(), 20);
    for c in &cases {
        let records: Vec<PiiRecord> = c.truths.iter().map(|t| record_with_email(t)).collect();
        let got = asr_exact_match(&c.generations, &records, PiiType::Email).unwrap();
        assert!((got - c.asr).abs() < 5e-5, "{:?}: {got} vs {}", c.generations, c.asr);
    }
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,2}", 1..14)
}

fn all(c: &str, r: &str) -> [f64; 6] {
    [
        rouge_n(c, r, 1).unwrap(),
        rouge_n(c, r, 2).unwrap(),
        rouge_l(c, r),
        bleu_n(c, r, 1).unwrap(),
        bleu_n(c, r, 2).unwrap(),
        bleu_n(c, r, 4).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scores_stay_in_unit_interval(c in sentence(), r in sentence()) {
        for s in all(&c.join(" "), &r.join(" ")) {
            prop_assert!((0.0..=1.0).contains(&s), "{s}");
        }
    }

    #[test]
    fn identical_texts_score_one(s in sentence()) {
        let s = s.join(" ");
        for v in all(&s, &s) {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn rouge_f1_is_symmetric(c in sentence(), r in sentence()) {
        let (c, r) = (c.join(" "), r.join(" "));
        prop_assert!((rouge_n(&c, &r, 1).unwrap() - rouge_n(&r, &c, 1).unwrap()).abs() < 1e-12);
        prop_assert!((rouge_l(&c, &r) - rouge_l(&r, &c)).abs() < 1e-12);
    }

    /// Overwriting more reference tokens with unseen words never raises
    /// unigram or LCS scores.
    #[test]
    fn corruption_is_monotone(r in sentence(), order in prop::collection::vec(any::<prop::sample::Index>(), 14)) {
        let reference = r.join(" ");
        let mut cand = r.clone();
        let mut prev = [rouge_n(&reference, &reference, 1).unwrap(), rouge_l(&reference, &reference), 1.0];
        for (k, ix) in order.iter().enumerate() {
            cand[ix.index(r.len())] = format!("z{k}");
            let c = cand.join(" ");
            let now = [rouge_n(&c, &reference, 1).unwrap(), rouge_l(&c, &reference), bleu_n(&c, &reference, 1).unwrap()];
            for (p, n) in prev.iter().zip(now) {
                prop_assert!(n <= p + 1e-12, "{n} > {p}");
            }
            prev = now;
        }
    }

    #[test]
    fn perplexity_is_at_least_one(v in 2usize..8, rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 1..6), ys in prop::collection::vec(0usize..8, 6)) {
        let n = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r[..v].to_vec()).collect();
        let t = Tensor::new(vec![n, v], data).unwrap();
        let y: Vec<usize> = ys[..n].iter().map(|y| y % v).collect();
        let p = perplexity_from_logits(&[t], &[y.clone()]).unwrap();
        prop_assert!(p >= 1.0 - 1e-12, "{p}");
        let flat = Tensor::new(vec![n, v], vec![0.25; n * v]).unwrap();
        let u = perplexity_from_logits(&[flat], &[y]).unwrap();
        prop_assert!((u - v as f64).abs() < 1e-9, "{u}");
    }

    #[test]
    fn asr_stays_in_unit_interval(truths in prop::collection::vec("[a-z]{1,6}@[a-z]{1,4}\\.com", 1..6), gens in prop::collection::vec("[a-z@. ]{0,20}", 6)) {
        let records: Vec<PiiRecord> = truths.iter().map(|t| record_with_email(t)).collect();
        let g: Vec<String> = gens[..truths.len()].to_vec();
        let a = asr_exact_match(&g, &records, PiiType::Email).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let echoed: Vec<String> = truths.iter().map(|t| format!("email: {t}.")).collect();
        prop_assert_eq!(asr_exact_match(&echoed, &records, PiiType::Email).unwrap(), 1.0);
    }
}
