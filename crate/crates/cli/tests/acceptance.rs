//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p bayesfed-cli --test acceptance`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use bayesfed::aggregation::{
    aggregate, aggregate_conflation, aggregate_dwc, aggregate_lp, aggregate_nwa, aggregate_point_nwa, aggregate_wc,
    aggregate_ws, AggregationStrategy, WeightVector, WEIGHT_SUM_TOLERANCE,
};
use bayesfed::bnn::{elbo_loss, Architecture, ModelMode, Prior, PriorModel};
use bayesfed::datasets::{generate_blobs, partition_2class, partition_dirichlet, partition_iid, PartitionPlan};
use bayesfed::orchestrator::{evaluate, load_data, run_federation, train_centralized, ExperimentConfig};
use bayesfed::uncertainty::{decompose_variance, normalized_entropy, McPredictionBlock};
use bayesfed::weighting::{compute_weights, weights_equal, weights_max_discrepancy, weights_train_size, ClientReport, WeightingScheme};
use bayesfed::{kl_gaussian, Gaussian, ModelParams, PointSet, PosteriorSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
    let var = 10f64.powf(rng.random_range(-3.0..2.0));
    Gaussian::new(rng.random_range(-5.0..5.0), var).unwrap()
}

fn random_set(rng: &mut ChaCha8Rng, p: usize) -> PosteriorSet {
    PosteriorSet::new("acc", (0..p).map(|_| random_gaussian(rng)).collect())
}

/// K clients, P parameters and weights, with an occasional zero weight.
fn random_round(rng: &mut ChaCha8Rng) -> (Vec<PosteriorSet>, WeightVector) {
    let k = rng.random_range(1..=6);
    let p = rng.random_range(1..=4);
    let clients = (0..k).map(|_| random_set(rng, p)).collect();
    let mut scores: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    if k > 1 && rng.random_bool(0.1) {
        scores[rng.random_range(0..k)] = 0.0;
    }
    (clients, WeightVector::from_scores(&scores).unwrap())
}

fn max_abs_dev(a: &PosteriorSet, b: &PosteriorSet) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .map(|(x, y)| (x.mean() - y.mean()).abs().max((x.variance() - y.variance()).abs()))
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut identity, mut conf_wc, mut means) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (clients, _) = random_round(&mut rng);
        let single = [clients[0].clone()];
        let prev = random_set(&mut rng, clients[0].len());
        let one = WeightVector::new(vec![1.0]).unwrap();
        for s in AggregationStrategy::ALL {
            let out = aggregate(s, &single, &one, Some(&prev)).map_err(|e| e.to_string())?;
            identity = identity.max(max_abs_dev(&out.posterior, &clients[0]));
        }
        let k = clients.len();
        let eq = WeightVector::new(vec![1.0 / k as f64; k]).unwrap();
        let c = aggregate_conflation(&clients).unwrap();
        let w = aggregate_wc(&clients, &eq).unwrap();
        conf_wc = conf_wc.max(max_abs_dev(&c, &w));
        let (_, weights) = random_round(&mut rng);
        let weights = if weights.len() == k { weights } else { eq };
        let nwa = aggregate_nwa(&clients, &weights).unwrap();
        let ws = aggregate_ws(&clients, &weights).unwrap();
        let lp = aggregate_lp(&clients, &weights).unwrap();
        for i in 0..nwa.len() {
            let m = nwa.params()[i].mean();
            means = means.max((m - ws.params()[i].mean()).abs()).max((m - lp.params()[i].mean()).abs());
        }
    }
    let elapsed = started.elapsed();
    ensure(identity < 1e-12, format!("single-client deviation {identity:e}"))?;
    ensure(conf_wc < 1e-12, format!("conflation vs WC deviation {conf_wc:e}"))?;
    ensure(means < 1e-12, format!("NWA/WS/LP mean deviation {means:e}"))?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "identity dev {identity:.1e}, conflation-WC dev {conf_wc:.1e}, mean dev {means:.1e}, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..1000 {
        let (clients, w) = random_round(&mut rng);
        let nwa = aggregate_nwa(&clients, &w).unwrap();
        let ws = aggregate_ws(&clients, &w).unwrap();
        let lp = aggregate_lp(&clients, &w).unwrap();
        let wc = aggregate_wc(&clients, &w).unwrap();
        let conf = aggregate_conflation(&clients).unwrap();
        let w_max = w.max();
        for i in 0..nwa.len() {
            let (v_ws, v_nwa, v_lp) = (ws.params()[i].variance(), nwa.params()[i].variance(), lp.params()[i].variance());
            violations += usize::from(!(v_ws <= v_nwa && v_nwa <= v_lp));
            let wc_bound = clients
                .iter()
                .zip(w.as_slice())
                .filter(|(_, &wk)| wk == w_max)
                .map(|(c, _)| c.params()[i].variance())
                .fold(f64::INFINITY, f64::min);
            violations += usize::from(wc.params()[i].variance() > wc_bound);
            let min_var = clients.iter().map(|c| c.params()[i].variance()).fold(f64::INFINITY, f64::min);
            violations += usize::from(conf.params()[i].variance() > min_var);
            checked += 3;
        }
    }
    ensure(violations == 0, format!("{violations} violations of {checked} checks"))?;
    Ok(format!("0 violations in {checked} checks"))
}

fn criterion_3() -> Outcome {
    let set = |ps: &[(f64, f64)]| {
        PosteriorSet::new("t", ps.iter().map(|&(m, v)| Gaussian::new(m, v).unwrap()).collect())
    };
    let out = aggregate_dwc(&[set(&[(1.0, 0.5)]), set(&[(-1.0, 0.5)])], &set(&[(0.0, 1.0)])).unwrap();
    let g = &out.posterior.params()[0];
    ensure(g.mean().abs() < 1e-12 && (g.variance() - 1.0 / 3.0).abs() < 1e-12, format!("fixture gave {g:?}"))?;
    ensure(out.clamped == 0, "clamped a well-conditioned fixture")?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let prev = random_set(&mut rng, 3);
        let k = rng.random_range(1..=8);
        let out = aggregate_dwc(&vec![prev.clone(); k], &prev).unwrap();
        ensure(out.clamped == 0, "clamped the telescoping case")?;
        for (a, b) in out.posterior.params().iter().zip(prev.params()) {
            worst = worst.max((a.mean() - b.mean()).abs() / b.mean().abs().max(1.0));
            worst = worst.max((a.variance() - b.variance()).abs() / b.variance().max(1.0));
        }
    }
    ensure(worst < 1e-12, format!("telescoping deviation {worst:e}"))?;

    // clients much broader than the previous global: D = 2·1 − 1·100 < 0
    let bad = aggregate_dwc(&[set(&[(0.0, 1.0)]), set(&[(1.0, 1.0)])], &set(&[(0.0, 0.01)])).unwrap();
    ensure(bad.clamped > 0, "D <= 0 case was not counted")?;
    Ok(format!("N(0,1/3) fixture ok, telescoping dev {worst:.1e}, clamp count {} on D<=0", bad.clamped))
}

/// Composite Simpson integral of p·ln(p/q) over μ_p ± 12σ_p.
fn kl_quadrature(p: &Gaussian, q: &Gaussian) -> f64 {
    let log_pdf = |x: f64, g: &Gaussian| {
        -0.5 * ((x - g.mean()).powi(2) / g.variance() + (2.0 * std::f64::consts::PI * g.variance()).ln())
    };
    let (lo, hi) = (p.mean() - 12.0 * p.std_dev(), p.mean() + 12.0 * p.std_dev());
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let lp = log_pdf(x, p);
        lp.exp() * (lp - log_pdf(x, q))
    };
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let x = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = Gaussian::new(rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0)).unwrap();
        let q = Gaussian::new(rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0)).unwrap();
        worst = worst.max((kl_gaussian(&p, &q).unwrap() - kl_quadrature(&p, &q)).abs());
    }
    ensure(worst < 1e-6, format!("max |closed form − quadrature| = {worst:e}"))?;
    Ok(format!("max |closed form − quadrature| = {worst:.1e} over 100 pairs"))
}

fn criterion_5() -> Outcome {
    let arch = Architecture::new(vec![2, 8, 3], ModelMode::Vi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = arch.param_count();
    let means: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vars: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..0.2)).collect();
    let post = PosteriorSet::from_moments(arch.shape_tag(), &means, &vars).unwrap();
    let prior = PriorModel::Isotropic(Prior::default());
    let data = generate_blobs(3, 2, 30, 1.0, 5).unwrap();
    let batch: Vec<usize> = (0..32).map(|i| (i * 7) % data.len()).collect();
    let noise: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = elbo_loss(&arch, &post, &prior, &data, &batch, &noise).map_err(|e| e.to_string())?;
    let loss = |m: &[f64], v: &[f64]| {
        let q = PosteriorSet::from_moments(arch.shape_tag(), m, v).unwrap();
        elbo_loss(&arch, &q, &prior, &data, &batch, &noise).unwrap().loss
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.random_range(0..2 * p);
        let (analytic, numeric) = if c < p {
            let (mut up, mut dn) = (means.clone(), means.clone());
            up[c] += h;
            dn[c] -= h;
            (out.grad_means[c], (loss(&up, &vars) - loss(&dn, &vars)) / (2.0 * h))
        } else {
            let i = c - p;
            let (mut up, mut dn) = (vars.clone(), vars.clone());
            up[i] += h;
            dn[i] -= h;
            (out.grad_variances[i], (loss(&means, &up) - loss(&means, &dn)) / (2.0 * h))
        };
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    ensure(worst < 1e-4, format!("worst relative error {worst:e}"))?;

    let pr = Prior::default();
    let at_prior = PosteriorSet::filled(arch.shape_tag(), p, Gaussian::new(pr.mean, pr.variance).unwrap());
    let kl = elbo_loss(&arch, &at_prior, &prior, &data, &batch, &noise).unwrap().kl;
    ensure(kl == 0.0, format!("prior-equals-posterior KL = {kl:e}"))?;
    Ok(format!("worst relative error {worst:.1e} on 100 coordinates; KL at prior = 0"))
}

fn random_simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..c).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn min_eigenvalue(dim: usize, data: &[f64]) -> f64 {
    nalgebra::DMatrix::from_row_slice(dim, dim, data).symmetric_eigen().eigenvalues.min()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lowest = f64::INFINITY;
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let m = rng.random_range(1..=30);
        let block = McPredictionBlock::new((0..m).map(|_| random_simplex(&mut rng, c)).collect()).unwrap();
        let (al, ep) = decompose_variance(&block);
        for mat in [&al, &ep] {
            for i in 0..c {
                for j in 0..c {
                    ensure(mat.get(i, j) == mat.get(j, i), "asymmetric matrix")?;
                }
            }
            lowest = lowest.min(min_eigenvalue(c, &mat.data));
        }
        if m == 1 {
            ensure(ep.data.iter().all(|&x| x == 0.0), "M = 1 gave nonzero epistemic")?;
        }
    }
    ensure(lowest >= -1e-9, format!("min eigenvalue {lowest:e}"))?;
    let fixture = McPredictionBlock::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let (al, ep) = decompose_variance(&fixture);
    ensure(al.data.iter().all(|&x| x == 0.0), "pure disagreement has aleatoric != 0")?;
    ensure((ep.trace() - 0.5).abs() < 1e-15, format!("epistemic trace {}", ep.trace()))?;
    let single = McPredictionBlock::new(vec![vec![0.2, 0.3, 0.5]]).unwrap();
    ensure(decompose_variance(&single).1.trace() == 0.0, "M = 1 epistemic trace != 0")?;
    Ok(format!("min eigenvalue {lowest:.1e} over 1000 blocks; fixture aleatoric 0, epistemic trace 0.5"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100_000 {
        let c = rng.random_range(2..=10);
        let h = normalized_entropy(&random_simplex(&mut rng, c));
        lo = lo.min(h);
        hi = hi.max(h);
    }
    ensure((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi), format!("range [{lo}, {hi}]"))?;
    for c in 2..=12 {
        ensure(normalized_entropy(&vec![1.0 / c as f64; c]) == 1.0, format!("uniform C={c} not exactly 1"))?;
        let mut one_hot = vec![0.0; c];
        one_hot[c / 2] = 1.0;
        ensure(normalized_entropy(&one_hot) == 0.0, format!("one-hot C={c} not exactly 0"))?;
    }
    Ok(format!("range [{lo:.4}, {hi:.6}] on 1e5 vectors; uniform = 1, one-hot = 0"))
}

fn valid(w: &WeightVector) -> bool {
    let s: f64 = w.as_slice().iter().sum();
    w.as_slice().iter().all(|x| x.is_finite() && *x >= 0.0) && (s - 1.0).abs() <= WEIGHT_SUM_TOLERANCE
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let p = rng.random_range(1..=4);
        let reports: Vec<ClientReport> = (0..k)
            .map(|id| ClientReport {
                client_id: id,
                model: ModelParams::Posterior(random_set(&mut rng, p)),
                train_size: rng.random_range(1..1000),
            })
            .collect();
        let global = random_set(&mut rng, p);
        for scheme in WeightingScheme::ALL {
            if scheme == WeightingScheme::MaxDiscrepancy && k == 1 {
                ensure(compute_weights(scheme, &reports, Some(&global)).is_err(), "K = 1 max-discrepancy accepted")?;
                continue;
            }
            let w = compute_weights(scheme, &reports, Some(&global)).map_err(|e| e.to_string())?;
            ensure(valid(&w) && w.len() == k, format!("{scheme} gave {:?}", w.as_slice()))?;
        }
    }
    let report = |id, m| ClientReport {
        client_id: id,
        model: ModelParams::Posterior(PosteriorSet::new("t", vec![Gaussian::new(m, 1.0).unwrap()])),
        train_size: 1,
    };
    let w = weights_max_discrepancy(&[report(0, 0.0), report(1, 0.1), report(2, 5.0)]).unwrap();
    let want = [0.49990, 0.49990, 0.00021];
    let dev = w.as_slice().iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev < 1e-4, format!("fixture gave {:?}", w.as_slice()))?;
    for k in 1..=12 {
        let reports: Vec<ClientReport> = (0..k)
            .map(|id| ClientReport {
                train_size: 37,
                ..report(id, 0.0)
            })
            .collect();
        ensure(
            weights_train_size(&reports).unwrap() == weights_equal(k).unwrap(),
            format!("equal sizes differ from equal weights at K={k}"),
        )?;
    }
    Ok(format!(
        "1000 random inputs valid; fixture ({:.5}, {:.5}, {:.5})",
        w.as_slice()[0],
        w.as_slice()[1],
        w.as_slice()[2]
    ))
}

fn disjoint_and_complete(plan: &PartitionPlan, n: usize) -> bool {
    let mut seen = vec![false; n];
    for &i in plan.assignments().iter().flatten() {
        if seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

fn criterion_9() -> Outcome {
    let ds = generate_blobs(10, 2, 100, 1.0, 9).unwrap();
    for seed in 0..100 {
        let plan = partition_2class(&ds, 10, seed).map_err(|e| e.to_string())?;
        ensure(disjoint_and_complete(&plan, ds.len()), "2-class plan not disjoint")?;
        for (k, h) in plan.class_histograms(&ds).iter().enumerate() {
            let classes = h.iter().filter(|&&c| c > 0).count();
            ensure(classes == 2, format!("seed {seed}: client {k} has {classes} classes"))?;
        }
        ensure(plan == partition_2class(&ds, 10, seed).unwrap(), "2-class plan not reproducible")?;
    }
    let big = generate_blobs(4, 2, 2500, 1.0, 9).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let plan = partition_dirichlet(&big, 5, 1000.0, seed).map_err(|e| e.to_string())?;
        ensure(disjoint_and_complete(&plan, big.len()), "dirichlet plan not disjoint")?;
        ensure(plan == partition_dirichlet(&big, 5, 1000.0, seed).unwrap(), "dirichlet plan not reproducible")?;
        for h in plan.class_histograms(&big) {
            let n: usize = h.iter().sum();
            for &c in &h {
                worst = worst.max((c as f64 / n as f64 - 0.25).abs());
            }
        }
        let iid = partition_iid(&big, 7, seed).unwrap();
        ensure(disjoint_and_complete(&iid, big.len()), "iid plan not disjoint")?;
        ensure(iid == partition_iid(&big, 7, seed).unwrap(), "iid plan not reproducible")?;
    }
    ensure(worst <= 0.05, format!("dirichlet(1000) proportion deviation {worst:.4}"))?;
    Ok(format!("2 classes per client over 100 seeds; dirichlet(1000) max deviation {worst:.4}"))
}

fn desk_config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    // defaults: C=3, d=2, 600/class, K=10 IID, VI [2,16,3], WS, E=1, R=60, M=20
    let mut cfg = ExperimentConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn final_accuracy(cfg: &ExperimentConfig) -> Result<(f64, Vec<f64>), String> {
    let (train, test) = load_data(cfg).map_err(|e| e.to_string())?;
    let out = run_federation(cfg, &train, &test).map_err(|e| e.to_string())?;
    Ok((out.final_evaluation.accuracy, out.rounds.iter().map(|r| r.accuracy).collect()))
}

fn criterion_10() -> Outcome {
    let started = Instant::now();
    let cfg = desk_config(&[("parallelism", "1")]);
    let (train, test) = load_data(&cfg).map_err(|e| e.to_string())?;
    let fed = run_federation(&cfg, &train, &test).map_err(|e| e.to_string())?.final_evaluation.accuracy;
    let central_model = train_centralized(&cfg, &train).map_err(|e| e.to_string())?;
    let central = evaluate(&cfg.arch, &central_model, &test, cfg.train.mc_samples, cfg.train.dropout_rate, 10)
        .map_err(|e| e.to_string())?
        .accuracy;
    let elapsed = started.elapsed();
    let gap = (fed - central) * 100.0;
    let detail = format!("federated {fed:.4}, centralized {central:.4}, gap {gap:+.2} pp, {:.1} s", elapsed.as_secs_f64());
    ensure(gap.abs() <= 3.0 && fed >= 0.90 && elapsed < Duration::from_secs(300), detail.clone())?;
    Ok(detail)
}

/// First round (1-based) whose accuracy reaches 80% of the final accuracy.
fn rounds_to_80(accs: &[f64]) -> usize {
    let target = 0.8 * accs.last().copied().unwrap_or(0.0);
    accs.iter().position(|&a| a >= target).map_or(accs.len(), |r| r + 1)
}

fn median(mut xs: Vec<usize>) -> usize {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

fn criterion_11() -> Outcome {
    // two-class shards need 2K divisible by C, hence four classes
    let mut medians = Vec::new();
    for s in ["ws", "wc", "conflation", "nwa", "lp"] {
        let mut r = Vec::new();
        for seed in 0..3 {
            let cfg = desk_config(&[
                ("partition", "two_class"),
                ("data.classes", "4"),
                ("arch.layers", "2,16,4"),
                ("lr.eta0", "0.01"),
                ("aggregation", s),
                ("seed", &seed.to_string()),
            ]);
            r.push(rounds_to_80(&final_accuracy(&cfg)?.1));
        }
        medians.push((s, median(r)));
    }
    let fast = medians[..3].iter().map(|m| m.1).max().unwrap();
    let slow = medians[3..].iter().map(|m| m.1).min().unwrap();
    let detail = medians.iter().map(|(s, m)| format!("{s} {m}")).collect::<Vec<_>>().join(", ");
    ensure(fast <= slow, format!("median rounds to 80%: {detail}"))?;
    Ok(format!("median rounds to 80% of final: {detail}"))
}

fn criterion_12() -> Outcome {
    let fixed = desk_config(&[("train.grad_clip", "5")]);
    let refresh = desk_config(&[("train.grad_clip", "5"), ("refresh_prior", "true")]);
    let a = final_accuracy(&fixed)?.0;
    let b = final_accuracy(&refresh)?.0;
    let drop = (a - b) * 100.0;
    let detail = format!("fixed prior {a:.4}, refreshed prior {b:.4}, drop {drop:.1} pp");
    ensure(drop >= 10.0, detail.clone())?;
    Ok(detail)
}

fn criterion_13() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let s = seed.to_string();
        let base = [("aggregation", "dwc"), ("rounds", "1"), ("train.local_epochs", "400"), ("seed", s.as_str())];
        let without = final_accuracy(&desk_config(&base))?.0;
        let mut with_pre = base.to_vec();
        with_pre.push(("pretrain.enabled", "true"));
        let with = final_accuracy(&desk_config(&with_pre))?.0;
        ok &= (with - without) * 100.0 >= 15.0;
        parts.push(format!("seed {seed}: {with:.3} vs {without:.3}"));
    }
    let detail = format!("with vs without pretrain, {}", parts.join("; "));
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn criterion_14() -> Outcome {
    let point = |id, v: Vec<f64>, n| ClientReport {
        client_id: id,
        model: ModelParams::Point(PointSet::new("t", v)),
        train_size: n,
    };
    let reports = [point(0, vec![0.5, -1.0, 3.0, 0.0], 120), point(1, vec![2.5, 1.0, -1.0, 8.0], 40)];
    let w = weights_train_size(&reports).unwrap();
    let points: Vec<PointSet> = reports.iter().map(|r| r.model.point().unwrap().clone()).collect();
    let g = aggregate_point_nwa(&points, &w).unwrap();
    // n = (120, 40): weights (3/4, 1/4)
    let hand = [0.75 * 0.5 + 0.25 * 2.5, -0.75 + 0.25 * 1.0, 0.75 * 3.0 - 0.25, 0.25 * 8.0];
    let expect = [1.0, -0.5, 2.0, 2.0];
    let dev = g
        .values()
        .iter()
        .zip(hand.iter().zip(expect))
        .map(|(a, (h, e))| (a - h).abs().max((a - e).abs()))
        .fold(0.0, f64::max);
    ensure(dev < 1e-12, format!("deviation {dev:e}"))?;
    Ok(format!("K=2 FedAvg fixture matched, max deviation {dev:.1e}"))
}

fn criterion_15() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("det.cfg");
    fs::write(
        &cfg,
        "rounds = 5\nclients = 4\nweighting = distance\npartition = dirichlet(0.5)\ndata.per_class = 100\n",
    )
    .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_bayesfed");
    let run = |input: &std::path::Path, out: &str| -> Result<(), String> {
        let status = Command::new(bin)
            .arg("run")
            .arg(input)
            .arg("--out")
            .arg(tmp.path().join(out))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), format!("run failed: {}", String::from_utf8_lossy(&status.stderr)))
    };
    run(&cfg, "first")?;
    let manifest = tmp.path().join("first/manifest.json");
    run(&manifest, "a")?;
    run(&manifest, "b")?;
    for f in ["metrics.csv", "retention.csv"] {
        let read = |d: &str| fs::read(tmp.path().join(d).join(f)).map_err(|e| e.to_string());
        let (x, y, z) = (read("a")?, read("b")?, read("first")?);
        ensure(x == y && y == z, format!("{f} differs between invocations"))?;
    }
    Ok("metrics.csv and retention.csv byte-identical across manifest re-runs".into())
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 15] = [
        ("aggregation identities", criterion_1),
        ("variance ordering", criterion_2),
        ("DWC algebra", criterion_3),
        ("KL oracle", criterion_4),
        ("ELBO gradient check", criterion_5),
        ("uncertainty decomposition", criterion_6),
        ("entropy bounds", criterion_7),
        ("weighting", criterion_8),
        ("partition properties", criterion_9),
        ("federated vs centralized gap", criterion_10),
        ("convergence-speed ordering", criterion_11),
        ("prior-refresh degradation", criterion_12),
        ("DWC pre-training effect", criterion_13),
        ("FedAvg equivalence", criterion_14),
        ("determinism", criterion_15),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
