//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs without the libtest harness so the
//! lines always reach the terminal.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use memlab::corpus::{TokenSeq, WikiBioEntry};
use memlab::geometry::{histogram, stage_geometry, vector_stats, StageTag};
use memlab::harness::{run_entries, run_partial_sweep, run_sweep, RunConfig, RunReport, SynthesisMode, DEFAULT_RANDOM_PHRASE};
use memlab::memory::{MemoryConfig, MemoryState};
use memlab::metrics::{jaccard, lcs_length, rouge_l};
use memlab::seed;
use memlab::synthetic::{generate, SyntheticConfig};
use memlab::LatentVector;

use openblas_src as _;

// Pinned tolerances and budgets.
const METRIC_CASES: usize = 1000;
const METRIC_BUDGET: Duration = Duration::from_secs(10);
const MEMORY_INSTANCES: usize = 100;
const SELF_RECALL_TOL: f64 = 1e-6;
const IDEMPOTENCE_TOL: f64 = 1e-8;
const LINEARITY_TOL: f64 = 1e-8;
const ORACLE_TOL: f64 = 1e-6;
const MEMORY_BUDGET: Duration = Duration::from_secs(30);
const CLOSED_FORM_TOL: f64 = 1e-10;
const SHRINK_SLACK: f64 = 1e-12;
const SCALE_BAND: (f64, f64) = (3.0, 4.0);
const PEAK_WINDOW: f64 = 1.0;
const SWEEP_GAIN: f64 = 0.10;
const SWEEP_BUDGET: Duration = Duration::from_secs(300);
const PARTIAL_GAIN: f64 = 0.15;
const ANGLE_RATIO: f64 = 5.0;
const GEOMETRY_CASES: usize = 1000;
const GEOMETRY_TOL: f64 = 1e-8;
const RUN_BUDGET: Duration = Duration::from_secs(60);
const MEMORY_PER_PAIR_BUDGET: f64 = 0.005;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gauss_vec(rng: &mut ChaCha8Rng, dim: usize) -> LatentVector {
    LatentVector((0..dim).map(|_| gauss(rng)).collect())
}

// ---------------------------------------------------------------- 1

fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |pick: &[&String]| {
        let mut it = long.iter();
        pick.iter().all(|t| it.any(|x| x == *t))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let pick: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if pick.len() > best && is_subseq(&pick) {
            best = pick.len();
        }
    }
    best
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(1, "acceptance/metrics");
    let mut mismatches = Vec::new();
    for case in 0..METRIC_CASES {
        let vocab = rng.random_range(1..=6);
        let seq = |rng: &mut ChaCha8Rng| TokenSeq {
            tokens: (0..rng.random_range(0..=10))
                .map(|_| format!("t{}", rng.random_range(0..vocab)))
                .collect(),
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let l = brute_lcs(&a.tokens, &b.tokens);
        let (m, n) = (a.tokens.len(), b.tokens.len());
        let f1 = if m + n == 0 { 1.0 } else { (2 * l) as f64 / (m + n) as f64 };
        let sa: BTreeSet<&String> = a.tokens.iter().collect();
        let sb: BTreeSet<&String> = b.tokens.iter().collect();
        let union = sa.union(&sb).count();
        let jac = if union == 0 { 1.0 } else { sa.intersection(&sb).count() as f64 / union as f64 };
        if lcs_length(&a.tokens, &b.tokens) != l || rouge_l(&a, &b) != f1 || jaccard(&a, &b) != jac {
            mismatches.push(case);
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && elapsed < METRIC_BUDGET,
        format!(
            "{METRIC_CASES} random pairs, {} mismatches vs brute-force LCS / set oracle, {:.2} s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn oracle_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = nalgebra_lapack::SVD::new(m.clone()).expect("LAPACK SVD");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * m.nrows().max(m.ncols()) as f64 * f64::EPSILON * 10.0;
    svd.pseudo_inverse(eps)
}

fn rel(a: &LatentVector, b: &LatentVector, scale: f64) -> f64 {
    a.distance(b) / scale
}

fn memory_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(2, "acceptance/memory");
    let (mut recall, mut idem, mut lin, mut oracle) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for inst in 0..MEMORY_INSTANCES {
        let k = rng.random_range(1..=64);
        let c = rng.random_range(1..=32);
        let n = rng.random_range(1..=k);
        let cfg = MemoryConfig {
            slots: k,
            latent_dim: c,
            lambda: 0.0,
            write_lambda: Some(0.0),
            sigma_w: 0.0,
            seed: inst as u64,
            ..MemoryConfig::default()
        };
        let episode: Vec<LatentVector> = (0..n).map(|_| gauss_vec(&mut rng, c)).collect();
        let state = MemoryState::init(&cfg)
            .and_then(|s| s.write_episode(&episode, "acceptance"))
            .map_err(|e| format!("instance {inst}: {e}"))?;
        let read = |q: &LatentVector| state.read(q).map(|r| r.z).map_err(|e| e.to_string());

        let z = DMatrix::from_fn(n, c, |i, j| episode[i].0[j]);
        let w = &z * oracle_pinv(state.prior());
        let m_oracle = oracle_pinv(&w) * &z;
        let proj = oracle_pinv(&m_oracle) * &m_oracle;
        let oracle_read = |q: &LatentVector| {
            let r = DMatrix::from_row_slice(1, c, &q.0) * &proj;
            LatentVector(r.iter().copied().collect())
        };

        for zi in &episode {
            let r = read(zi)?;
            recall = recall.max(rel(&r, zi, zi.norm()));
            oracle = oracle.max(rel(&r, &oracle_read(zi), zi.norm()));
        }
        let q1 = gauss_vec(&mut rng, c);
        let q2 = gauss_vec(&mut rng, c);
        let r1 = read(&q1)?;
        idem = idem.max(rel(&read(&r1)?, &r1, q1.norm()));
        oracle = oracle.max(rel(&r1, &oracle_read(&q1), q1.norm()));
        let (a, b) = (gauss(&mut rng), gauss(&mut rng));
        let mix = LatentVector(q1.0.iter().zip(&q2.0).map(|(x, y)| a * x + b * y).collect());
        let r2 = read(&q2)?;
        let combo = LatentVector(r1.0.iter().zip(&r2.0).map(|(x, y)| a * x + b * y).collect());
        lin = lin.max(rel(&read(&mix)?, &combo, a.abs() * q1.norm() + b.abs() * q2.norm()));
    }
    let elapsed = start.elapsed();
    check(
        recall < SELF_RECALL_TOL
            && idem < IDEMPOTENCE_TOL
            && lin < LINEARITY_TOL
            && oracle < ORACLE_TOL
            && elapsed < MEMORY_BUDGET,
        format!(
            "{MEMORY_INSTANCES} instances: self-recall {recall:.1e}, idempotence {idem:.1e}, \
             linearity {lin:.1e}, vs SVD oracle {oracle:.1e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn ridge_shrinkage() -> Outcome {
    let mut rng = seed::rng(3, "acceptance/ridge");
    let mut closed_form = 0.0f64;
    for inst in 0..MEMORY_INSTANCES {
        let c = rng.random_range(1..=32);
        let lambda = rng.random_range(0.0..10.0);
        let cfg = MemoryConfig {
            slots: 1,
            latent_dim: c,
            lambda,
            seed: inst as u64,
            ..MemoryConfig::default()
        };
        let prior = MemoryState::init(&cfg).map_err(|e| e.to_string())?;
        let written = prior
            .write_episode(&[gauss_vec(&mut rng, c)], "acceptance")
            .map_err(|e| e.to_string())?;
        for state in [&prior, &written] {
            let m = LatentVector(state.memory().row(0).iter().copied().collect());
            let query = m.scaled(rng.random_range(-3.0..3.0));
            let out = state.read(&query).map_err(|e| e.to_string())?.z;
            let m2 = m.dot(&m);
            closed_form = closed_form.max((out.norm() / query.norm() - m2 / (m2 + lambda)).abs());
        }
    }

    let grid = [0.0, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0];
    let mut violations = 0;
    for inst in 0..MEMORY_INSTANCES {
        let k = rng.random_range(2..=64);
        let c = rng.random_range(2..=32);
        let episode: Vec<LatentVector> = (0..rng.random_range(1..=k)).map(|_| gauss_vec(&mut rng, c)).collect();
        let query = gauss_vec(&mut rng, c);
        let mut last = f64::INFINITY;
        for lambda in grid {
            let cfg = MemoryConfig {
                slots: k,
                latent_dim: c,
                lambda,
                write_lambda: Some(0.0),
                sigma_w: 0.0,
                seed: 1000 + inst as u64,
                ..MemoryConfig::default()
            };
            let norm = MemoryState::init(&cfg)
                .and_then(|s| s.write_episode(&episode, "acceptance"))
                .and_then(|s| s.read(&query))
                .map_err(|e| e.to_string())?
                .z
                .norm();
            if norm > last * (1.0 + SHRINK_SLACK) {
                violations += 1;
            }
            last = norm;
        }
    }
    check(
        closed_form < CLOSED_FORM_TOL && violations == 0,
        format!(
            "1-slot closed form max error {closed_form:.1e}; {violations} monotonicity violations \
             over {MEMORY_INSTANCES} instances x {} lambdas",
            grid.len()
        ),
    )
}

// ---------------------------------------------------------------- 4-7

struct Lab {
    corpus: Vec<WikiBioEntry>,
    config: RunConfig,
}

impl Lab {
    fn run(&self, mode: SynthesisMode) -> Result<RunReport, String> {
        let mut cfg = self.config.clone();
        cfg.mode = mode;
        run_entries(&cfg, &self.corpus).map_err(|e| e.to_string())
    }
}

fn means(report: &RunReport) -> Result<(f64, f64), String> {
    let s = report.summaries.ok_or("no scored entries")?;
    Ok((s.rouge_l.mean, s.jaccard.mean))
}

fn ideal_reconstruction(lab: &Lab) -> Outcome {
    let ideal = lab.run(SynthesisMode::Ideal)?;
    let (ir, ij) = means(&ideal)?;
    let mut best = (f64::MIN, f64::MIN);
    for s in 1..=7 {
        let (r, j) = means(&lab.run(SynthesisMode::Scaled { s: s as f64 })?)?;
        best = (best.0.max(r), best.1.max(j));
    }
    check(
        ideal.exact_recall == 1.0 && ideal.failures().count() == 0 && ir > best.0 && ij > best.1,
        format!(
            "{} entries, exact pairs {:.1}%, RougeL {ir:.4} vs best scaled {:.4}, Jaccard {ij:.4} vs {:.4}",
            lab.corpus.len(),
            100.0 * ideal.exact_recall,
            best.0,
            best.1
        ),
    )
}

/// Non-decreasing up to the first maximum, non-increasing after it.
fn unimodal(values: &[f64]) -> (bool, usize) {
    let peak = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best });
    let up = values[..=peak].windows(2).all(|w| w[0] <= w[1]);
    let down = values[peak..].windows(2).all(|w| w[0] >= w[1]);
    (up && down, peak)
}

fn sweep_shape(lab: &Lab) -> Outcome {
    let start = Instant::now();
    let estimate = lab
        .run(SynthesisMode::Base)?
        .scale_estimate
        .ok_or("base run has no scale estimate")?;
    let s_values: Vec<f64> = (1..=7).map(f64::from).collect();
    let rows = run_sweep(&lab.config, &lab.corpus, &s_values).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rouge: Vec<f64> = rows.iter().map(|r| r.rouge_l.mean).collect();
    let jac: Vec<f64> = rows.iter().map(|r| r.jaccard.mean).collect();
    let (rouge_ok, rouge_peak) = unimodal(&rouge);
    let (jac_ok, jac_peak) = unimodal(&jac);
    let near = |i: usize| (s_values[i] - estimate).abs() <= PEAK_WINDOW;
    let gain = rouge[rouge_peak] - rouge[0];
    let curve = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(
        (SCALE_BAND.0..=SCALE_BAND.1).contains(&estimate)
            && rouge_ok
            && jac_ok
            && near(rouge_peak)
            && near(jac_peak)
            && gain >= SWEEP_GAIN
            && elapsed < SWEEP_BUDGET,
        format!(
            "estimate {estimate:.3}; RougeL [{}] peak s={}; Jaccard [{}] peak s={}; gain {gain:.3}; {:.1} s",
            curve(&rouge),
            s_values[rouge_peak],
            curve(&jac),
            s_values[jac_peak],
            elapsed.as_secs_f64()
        ),
    )
}

fn partial_monotone(lab: &Lab) -> Outcome {
    let f_values = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rows = run_partial_sweep(&lab.config, &lab.corpus, &f_values).map_err(|e| e.to_string())?;
    let jac: Vec<f64> = rows.iter().map(|r| r.jaccard.mean).collect();
    let monotone = jac.windows(2).all(|w| w[0] <= w[1]);
    let gain = jac[jac.len() - 1] - jac[0];
    check(
        monotone && gain >= PARTIAL_GAIN,
        format!(
            "Jaccard over f = {f_values:?}: [{}], gain {gain:.3}",
            jac.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn random_prompt_angles(lab: &Lab) -> Outcome {
    let angle = |report: &RunReport| -> Result<f64, String> {
        stage_geometry(&report.records, StageTag::WriteReadout, 10)
            .map_err(|e| e.to_string())?
            .mean_angle_deg()
            .ok_or_else(|| "no angles".to_string())
    };
    let base = angle(&lab.run(SynthesisMode::Base)?)?;
    let random = angle(&lab.run(SynthesisMode::RandomPrompt {
        phrase: DEFAULT_RANDOM_PHRASE.to_string(),
    })?)?;
    let ratio = random / base;
    check(
        ratio >= ANGLE_RATIO,
        format!("mean write/readout angle: random prompt {random:.3} deg, base {base:.3} deg, ratio {ratio:.2}"),
    )
}

// ---------------------------------------------------------------- 8

fn geometry_properties() -> Outcome {
    let mut rng = seed::rng(8, "acceptance/geometry");
    let mut failures = [0usize; 5];
    let stats = |a: &LatentVector, b: &LatentVector| vector_stats(a, b).expect("same dims");
    for _ in 0..GEOMETRY_CASES {
        let dim = rng.random_range(1..=64);
        let spread = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut v = || LatentVector((0..dim).map(|_| spread * gauss(&mut rng)).collect());
        let (a, b, c) = (v(), v(), v());

        let st = stats(&a, &b);
        let theta = st.angle_deg.expect("non-degenerate").to_radians();
        let lhs = st.distance.powi(2);
        let rhs = st.norm_a.powi(2) + st.norm_b.powi(2) - 2.0 * st.norm_a * st.norm_b * theta.cos();
        if (lhs - rhs).abs() > GEOMETRY_TOL * (st.norm_a + st.norm_b).powi(2) {
            failures[0] += 1;
        }

        let (alpha, beta) = (10f64.powf(rng.random_range(-3.0..3.0)), 10f64.powf(rng.random_range(-3.0..3.0)));
        let scaled = stats(&a.scaled(alpha), &b.scaled(beta)).angle_deg.unwrap();
        if (scaled - st.angle_deg.unwrap()).abs() > GEOMETRY_TOL {
            failures[1] += 1;
        }

        let (ab, bc, ac) = (stats(&a, &b), stats(&b, &c), stats(&a, &c));
        if ac.distance > (ab.distance + bc.distance) * (1.0 + 1e-12) {
            failures[2] += 1;
        }
        if ac.angle_deg.unwrap() > ab.angle_deg.unwrap() + bc.angle_deg.unwrap() + GEOMETRY_TOL {
            failures[3] += 1;
        }

        let values: Vec<f64> = (0..rng.random_range(0..300)).map(|_| spread * gauss(&mut rng)).collect();
        let bins = rng.random_range(1..=50);
        let range = if rng.random_bool(0.5) || values.is_empty() {
            Some((-spread, spread * rng.random_range(0.1..2.0)))
        } else {
            None
        };
        let h = histogram(&values, bins, range).expect("valid histogram");
        let counted: usize = h.bins.iter().map(|b| b.count).sum();
        let expected_outside = match range {
            Some((lo, hi)) => values.iter().filter(|&&x| x < lo || x > hi).count(),
            None => 0,
        };
        if h.bins.len() != bins || counted + h.out_of_range != values.len() || h.out_of_range != expected_outside {
            failures[4] += 1;
        }
    }
    check(
        failures.iter().all(|&f| f == 0),
        format!(
            "{GEOMETRY_CASES} cases each; failures: law of cosines {}, angle scale invariance {}, \
             triangle (distance) {}, triangle (angle) {}, histogram conservation {}",
            failures[0], failures[1], failures[2], failures[3], failures[4]
        ),
    )
}

// ---------------------------------------------------------------- 9

fn determinism(lab: &Lab) -> Outcome {
    let mut cfg = lab.config.clone();
    cfg.mode = SynthesisMode::Scaled { s: 3.0 };
    let run = |cfg: &RunConfig| run_entries(cfg, &lab.corpus).map_err(|e| e.to_string());
    let first = run(&cfg)?;
    let second = run(&cfg)?;
    cfg.parallelism = 8;
    let parallel = run(&cfg)?;
    let repeat = first.same_results(&second);
    let threads = first.same_results(&parallel);
    check(
        repeat && threads,
        format!("repeat run identical: {repeat}; parallelism 1 vs 8 identical: {threads}"),
    )
}

// ---------------------------------------------------------------- 10

fn performance(lab: &Lab) -> Outcome {
    let report = lab.run(SynthesisMode::Base)?;
    let t = report.timing;
    check(
        lab.config.parallelism == 1
            && Duration::from_secs_f64(t.wall_seconds) < RUN_BUDGET
            && t.memory_seconds_per_pair < MEMORY_PER_PAIR_BUDGET,
        format!(
            "{} entries single-threaded in {:.2} s; memory {:.3} ms per pair",
            t.entries,
            t.wall_seconds,
            1e3 * t.memory_seconds_per_pair
        ),
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let lab = Lab {
        corpus: generate(&SyntheticConfig::default()).expect("synthetic corpus"),
        config: RunConfig::default(),
    };
    let criteria: Vec<Criterion> = vec![
        ("metric oracles", Box::new(metric_oracles)),
        ("memory exactness", Box::new(memory_exactness)),
        ("ridge shrinkage", Box::new(ridge_shrinkage)),
        ("ideal reconstruction", Box::new(|| ideal_reconstruction(&lab))),
        ("scaling sweep shape", Box::new(|| sweep_shape(&lab))),
        ("partial-input monotonicity", Box::new(|| partial_monotone(&lab))),
        ("random-prompt ablation", Box::new(|| random_prompt_angles(&lab))),
        ("geometry properties", Box::new(geometry_properties)),
        ("determinism", Box::new(|| determinism(&lab))),
        ("performance budget", Box::new(|| performance(&lab))),
    ];
    let mut failed = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {verdict}  {name}: {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
