//! Acceptance run: one PASS/FAIL line per criterion with the measured values
//! and the pinned tolerance. Runs without the libtest harness so the lines
//! always reach the terminal; exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::props;
use lrmt::experiments::{load_state, run, ExperimentReport, ExperimentSpec, RunOptions, BASELINES, MULTILINGUAL};
use lrmt::metrics::{bleu, chrf, compare, format_fixed, format_signed, grid_columns, report_from_bleu};
use lrmt::nmt::Checkpoint;

const BLEU_TOL: f64 = 0.01;
const CHRF_TOL: f64 = 0.001;
const GRAD_TOL: f64 = 1e-4;
const GRAD_COORDS: usize = 100;
const MEMO_PPL: f64 = 1.1;
const GRID_SEED: u64 = 11;
const ML_GAIN: f64 = 2.0;
const BT_SLACK: f64 = 0.5;
const FT_GAIN: f64 = 2.0;
const ON_TARGET: f64 = 0.8;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    if took > limit {
        o.ok = false;
    }
    o.detail = format!("{}; {:.2?} (limit {:?})", o.detail, took, limit);
    o
}

fn metric_oracle() -> Outcome {
    let (h, r) = common::metric_fixture();
    let e = common::metric_expected();
    let b = bleu(&h, &r).unwrap().score;
    let c = chrf(&h, &r).unwrap();
    let (eb, ec) = (common::expected_num(&e, "all", "bleu"), common::expected_num(&e, "all", "chrf"));
    let ib = bleu(&r, &r).unwrap().score;
    let ic = chrf(&r, &r).unwrap();
    let ok = h.len() == 20 && (b - eb).abs() <= BLEU_TOL && (c - ec).abs() <= CHRF_TOL && ib == 100.0 && ic == 1.0;
    outcome(
        ok,
        format!(
            "BLEU {b:.4} vs {eb:.4} (±{BLEU_TOL}), chrF {c:.5} vs {ec:.5} (±{CHRF_TOL}), identity BLEU {ib} chrF {ic}"
        ),
    )
}

fn published_arithmetic() -> Outcome {
    let cols = grid_columns();
    let low = &cols[2..];
    let rows = [
        (BASELINES, [32.0, 29.4, 14.6, 17.5, 28.0, 28.7, 4.6, 6.3, 8.3, 9.1]),
        (MULTILINGUAL, [30.9, 29.5, 23.8, 29.6, 31.3, 34.7, 9.4, 9.4, 19.8, 19.8]),
        ("+ BT1 + BT2(*)", [31.3, 29.6, 26.2, 31.3, 31.4, 36.4, 12.4, 10.6, 21.6, 20.7]),
    ];
    let mut reports: Vec<_> = rows.iter().map(|(l, v)| report_from_bleu(l, &cols, v)).collect();
    for r in &mut reports {
        r.aggregate(low).unwrap();
    }
    let ml = format_fixed(reports[1].bleu_low.unwrap(), 1);
    let bt = format_fixed(reports[2].bleu_low.unwrap(), 1);
    let d = compare(&reports[1], &reports[0]).unwrap();
    let et_vro = d.deltas.iter().find(|x| x.0 == "et-vro").map(|x| format_signed(x.1, 1)).unwrap();
    outcome(ml == "22.2" && bt == "23.8" && et_vro == "+9.2", format!("ML {ml}, +BT1+BT2(*) {bt}, ML-Baselines et-vro {et_vro}"))
}

fn gradient_check() -> Outcome {
    let groups = common::gradcheck(GRAD_COORDS);
    let (name, worst) = groups.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(
        worst < GRAD_TOL,
        format!("{} groups x {GRAD_COORDS} coords, max rel err {worst:.2e} ({name}) < {GRAD_TOL:e}", groups.len()),
    )
}

fn memorization() -> Outcome {
    let m = common::memorize();
    outcome(
        m.valid_ppl < MEMO_PPL && m.train_bleu == 100.0,
        format!("ppl {:.4} < {MEMO_PPL}, train BLEU {:.1} after {} updates {:?}", m.valid_ppl, m.train_bleu, m.updates, m.mismatches),
    )
}

fn property(name: &str, r: Result<(), String>) -> (bool, String) {
    match r {
        Ok(()) => (true, format!("{name} ok")),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn tokenizer_round_trip() -> Outcome {
    let (ok, d) = property("round trip", props::bpe_round_trip());
    outcome(ok, format!("{d} over {} fuzzed strings", props::ROUND_TRIP_CASES))
}

fn corpus_invariants() -> Outcome {
    let checks = [
        property("dedup idempotence", props::dedup_idempotent()),
        property("reverse involution", props::reverse_involution()),
        property("split partition/quota", props::split_partition_quota()),
        property("equal shares max-min <= 1", props::equal_shares_balanced()),
    ];
    let ok = checks.iter().all(|c| c.0);
    let detail = checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join(", ");
    outcome(ok, format!("{detail} ({} cases each)", props::CORPUS_CASES))
}

fn run_grid(dir: &Path) -> ExperimentReport {
    let spec = ExperimentSpec::toy_grid(dir.join("data/manifest.toml"), GRID_SEED);
    run(&spec, &dir.join("run"), RunOptions::default()).expect("toy grid run")
}

fn params_bits(c: &Checkpoint) -> Vec<u32> {
    c.params.data.iter().map(|x| x.to_bits()).collect()
}

fn grid_claims(dir: &Path, r: &ExperimentReport) -> Vec<(&'static str, Outcome)> {
    let low = |label: &str| r.row(label).and_then(|x| x.bleu_low).unwrap_or(f64::NAN);
    let (base, ml, bt1, bt2) = (low(BASELINES), low(MULTILINGUAL), low("+ BT1"), low("+ BT2"));
    let mut out = vec![
        ("7a multilingual gain", outcome(ml >= base + ML_GAIN, format!("ML BLEU_low {ml:.2} vs Baselines {base:.2} + {ML_GAIN}"))),
        (
            "7b back-translation does not degrade",
            outcome(
                bt1 >= ml - BT_SLACK && bt2 >= bt1 - BT_SLACK,
                format!("ML {ml:.2}, +BT1 {bt1:.2}, +BT2 {bt2:.2} (slack {BT_SLACK})"),
            ),
        ),
    ];

    let ft_label = format!("{MULTILINGUAL} fine-tuned on et-vro");
    let ft = r.single(&ft_label).map_or(f64::NAN, |s| s.bleu);
    let et_vro = r.row(BASELINES).and_then(|b| b.get("et-vro")).map_or(f64::NAN, |s| s.bleu);
    out.push((
        "7c fine-tuning beats the bilingual baseline",
        outcome(ft >= et_vro + FT_GAIN, format!("fine-tuned et-vro {ft:.2} vs baseline {et_vro:.2} + {FT_GAIN}")),
    ));

    let state = load_state(&dir.join("run")).unwrap();
    let transfer = state.stages.iter().find(|s| s.label == "et-vro on et-fi weights").unwrap();
    let parent = state.stages.iter().find(|s| s.label == BASELINES).unwrap();
    let init = Checkpoint::load(dir.join("run").join(transfer.init.as_ref().unwrap())).unwrap();
    let parent_best = Checkpoint::load(dir.join("run").join(&parent.checkpoints["et-fi"])).unwrap();
    let equal = params_bits(&init) == params_bits(&parent_best);
    out.push((
        "7d transfer child starts from the parent's bytes",
        outcome(equal, format!("{} parameters, step {}, byte-equal: {equal}", init.params.data.len(), init.step)),
    ));

    let zs: Vec<_> = r.zero_shot.iter().filter(|z| z.label == MULTILINGUAL).collect();
    let rates: Vec<String> = zs.iter().map(|z| format!("{} {:.3}", z.direction, z.on_target.unwrap_or(f64::NAN))).collect();
    let ok = !zs.is_empty() && zs.iter().all(|z| z.on_target.is_some_and(|x| x >= ON_TARGET));
    out.push(("7e zero-shot output in the requested language", outcome(ok, format!("ML on-target {} (>= {ON_TARGET})", rates.join(", ")))));
    out
}

fn main() -> ExitCode {
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut record = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        results.push((name.to_string(), o));
    };

    record("1 metric oracle", timed(Duration::from_secs(1), metric_oracle));
    record("2 published-table arithmetic", timed(Duration::from_secs(1), published_arithmetic));
    record("3 gradient check", timed(Duration::from_secs(60), gradient_check));
    record("4 memorization", timed(Duration::from_secs(300), memorization));
    record("5 tokenizer round trip", timed(Duration::from_secs(30), tokenizer_round_trip));
    record("6 corpus invariants", timed(Duration::from_secs(60), corpus_invariants));

    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let clock = Instant::now();
    let report = run_grid(&a);
    let first = clock.elapsed();
    print!("{}", report.to_tsv());
    for (name, o) in grid_claims(&a, &report) {
        record(name, o);
    }
    let grid_limit = Duration::from_secs(30 * 60);
    record("7 toy grid runtime", outcome(first < grid_limit, format!("{first:.1?} (limit {grid_limit:?})")));

    let clock = Instant::now();
    run_grid(&b);
    let second = clock.elapsed();
    let same = |f: &str| std::fs::read(a.join("run").join(f)).unwrap() == std::fs::read(b.join("run").join(f)).unwrap();
    let (tsv, json) = (same("report.tsv"), same("report.json"));
    record(
        "8 determinism",
        outcome(tsv && json, format!("report.tsv identical: {tsv}, report.json identical: {json}; rerun {second:.1?}")),
    );

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.ok).map(|r| r.0.as_str()).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
