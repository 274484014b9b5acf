use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relucert_core::certifier::{certify_target, certify_untargeted, select_target};
use relucert_core::model::{argmax, random_network};
use relucert_core::oracle::{attack, grid_scan, soundness_check, AttackConfig, Objective};
use relucert_core::report::{BenchRow, CompareRow, MethodResult, Mode, OracleEntry, RunReport};
use relucert_core::{
    Certificate, Error, InputFile, Method, Network, NormOrder, Result, SearchConfig, TargetMode,
};

use crate::{parse_dims, BenchArgs, GenArgs, MethodArg, SearchArgs, VerifyArgs};

const SOUNDNESS_SAMPLES: usize = 500;

fn methods(arg: MethodArg, net: &Network, include_appendix_e: bool) -> Vec<Method> {
    match arg {
        MethodArg::FastLin => vec![Method::FastLin],
        MethodArg::FastLip => vec![Method::FastLip],
        MethodArg::OpNorm => vec![Method::OpNorm],
        MethodArg::AppendixE => vec![Method::AppendixE],
        MethodArg::All => {
            let mut m = Method::ALL.to_vec();
            if include_appendix_e && net.depth() == 2 {
                m.push(Method::AppendixE);
            }
            m
        }
    }
}

fn search_config(s: &SearchArgs, domain: Option<(f64, f64)>) -> SearchConfig {
    SearchConfig {
        eps0: s.eps0,
        max_iter: s.max_iter,
        rel_tol: s.tol,
        input_domain: domain,
        threads: s.threads,
        ..SearchConfig::default()
    }
}

fn parse_target(s: &str, seed: u64) -> Result<TargetMode> {
    Ok(match s {
        "runner-up" => TargetMode::RunnerUp,
        "random" => TargetMode::Random(seed),
        "least" => TargetMode::LeastLikely,
        other => TargetMode::Index(other.parse().map_err(|_| {
            Error::InvalidParameter(format!(
                "target must be runner-up, random, least or a class index, got '{other}'"
            ))
        })?),
    })
}

fn summary_line(cert: &Certificate) -> String {
    let target = cert
        .target_class
        .map_or_else(|| "any".to_string(), |j| j.to_string());
    format!(
        "{:<10} p={:<3} {} -> {:<3} radius {:.6e} ({}, {:.1} ms)",
        cert.method.as_str(),
        cert.p.as_str(),
        cert.true_class,
        target,
        cert.radius,
        format!("{:?}", cert.status).to_lowercase(),
        cert.wall_time_ms
    )
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn print_out(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(report: &RunReport, out: Option<&Path>, lines: &[String]) -> Result<()> {
    match out {
        Some(path) => {
            report.save(path).map_err(|e| with_path(e, path))?;
            print_out(&lines.join("\n"))
        }
        None => print_out(&report.to_json()?),
    }
}

/// Prefixes I/O errors with the offending path.
fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io(e) => Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        other => other,
    }
}

pub fn verify(a: &VerifyArgs, compare: bool) -> Result<()> {
    let net = Network::load(&a.model).map_err(|e| with_path(e, &a.model))?;
    let input = InputFile::load(&a.input).map_err(|e| with_path(e, &a.input))?;
    let x0 = input.input;
    let logits = net.forward(&x0)?;
    let c = input.label.unwrap_or_else(|| argmax(&logits));
    if c >= net.output_dim() {
        return Err(Error::Schema {
            layer: None,
            message: format!("label {c} out of range for {} outputs", net.output_dim()),
        });
    }
    let cfg = search_config(&a.search, a.domain);
    let p = a.search.p;
    let j = if a.untargeted {
        None
    } else {
        Some(select_target(
            &logits,
            c,
            parse_target(&a.target, a.search.seed)?,
        )?)
    };
    let methods = methods(a.method, &net, compare);

    let mut report = RunReport::new(if compare { "compare" } else { "verify" });
    report.model_path = Some(a.model.display().to_string());
    report.input_path = Some(a.input.display().to_string());
    report.p = Some(p);
    report.mode = Some(if a.untargeted {
        Mode::Untargeted
    } else {
        Mode::Targeted
    });
    report.methods = methods.clone();
    report.true_class = Some(c);

    let mut lines = Vec::new();
    let mut certs = Vec::new();
    let total = Instant::now();
    for &m in &methods {
        let result = match j {
            Some(j) => MethodResult {
                certificate: certify_target(&net, &x0, c, j, p, m, &cfg)?,
                per_target: Vec::new(),
            },
            None => {
                let u = certify_untargeted(&net, &x0, c, p, m, &cfg)?;
                MethodResult {
                    certificate: u.certificate,
                    per_target: u.per_target,
                }
            }
        };
        lines.push(summary_line(&result.certificate));
        report
            .timing_ms
            .insert(m.as_str().to_string(), result.certificate.wall_time_ms);
        certs.push(result.certificate.clone());
        report.results.insert(m.as_str().to_string(), result);
    }
    report
        .timing_ms
        .insert("certify-total".into(), total.elapsed().as_secs_f64() * 1e3);

    if compare {
        compare_oracles(
            &net,
            &x0,
            c,
            j,
            p,
            &cfg,
            a.search.seed,
            &certs,
            &mut report,
            &mut lines,
        )?;
    }
    emit(&report, a.out.as_deref(), &lines)
}

#[allow(clippy::too_many_arguments)]
fn compare_oracles(
    net: &Network,
    x0: &[f64],
    c: usize,
    j: Option<usize>,
    p: NormOrder,
    cfg: &SearchConfig,
    seed: u64,
    certs: &[Certificate],
    report: &mut RunReport,
    lines: &mut Vec<String>,
) -> Result<()> {
    let objective = match j {
        Some(j) => Objective::Targeted { c, j },
        None => Objective::Untargeted { c },
    };
    let start = Instant::now();
    let atk = attack(
        net,
        x0,
        objective,
        p,
        &AttackConfig {
            seed,
            ..AttackConfig::default()
        },
    )?;
    report
        .timing_ms
        .insert("attack".into(), start.elapsed().as_secs_f64() * 1e3);
    let attack_value = atk.value();
    report.oracles.push(match attack_value {
        Some(v) => OracleEntry::found("attack", v),
        None => OracleEntry::not_found("attack", "no misclassifying perturbation found"),
    });

    let mut reference = attack_value;
    let n0 = net.input_dim();
    if n0 > 3 {
        report.oracles.push(OracleEntry::skipped(
            "grid",
            format!("input dimension {n0} > 3"),
        ));
    } else if cfg.input_domain.is_some() {
        report.oracles.push(OracleEntry::skipped(
            "grid",
            "grid search ignores the input domain",
        ));
    } else if let Some(reach) = attack_value.filter(|v| *v > 0.0) {
        let resolution = [0, 20001, 1001, 121][n0];
        let start = Instant::now();
        let scan = grid_scan(net, x0, objective, resolution, 1.05 * reach)?;
        report
            .timing_ms
            .insert("grid".into(), start.elapsed().as_secs_f64() * 1e3);
        match scan.result(p).value() {
            Some(v) => {
                report.oracles.push(OracleEntry::found("grid", v));
                reference = Some(reference.map_or(v, |r| r.min(v)));
            }
            None => report.oracles.push(OracleEntry::not_found(
                "grid",
                "no grid point flips the decision",
            )),
        }
    } else {
        report.oracles.push(OracleEntry::skipped(
            "grid",
            "no attack radius to size the grid",
        ));
    }

    lines.push(format!(
        "{:<10} {:>14} {:>10} {:>8}",
        "method", "radius", "ratio", "sound"
    ));
    for cert in certs {
        let check = soundness_check(cert, net, x0, SOUNDNESS_SAMPLES, seed)?;
        let ratio = reference.filter(|r| *r > 0.0).map(|r| cert.radius / r);
        lines.push(format!(
            "{:<10} {:>14.6e} {:>10} {:>8}",
            cert.method.as_str(),
            cert.radius,
            ratio.map_or_else(|| "-".into(), |r| format!("{r:.4}")),
            check.passed()
        ));
        report.compare.push(CompareRow {
            method: cert.method,
            radius: cert.radius,
            ratio,
            wall_time_ms: cert.wall_time_ms,
            sound: Some(check.passed()),
        });
    }
    if let Some(r) = reference {
        lines.push(format!("reference upper bound {r:.6e}"));
    }
    Ok(())
}

fn time_once(
    net: &Network,
    x0: &[f64],
    c: usize,
    m: Method,
    untargeted: bool,
    cfg: &SearchConfig,
    p: NormOrder,
) -> Result<f64> {
    let start = Instant::now();
    if untargeted {
        certify_untargeted(net, x0, c, p, m, cfg)?;
    } else {
        let logits = net.forward(x0)?;
        let j = select_target(&logits, c, TargetMode::RunnerUp)?;
        certify_target(net, x0, c, j, p, m, cfg)?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    let shapes = a
        .shapes
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(parse_dims)
        .collect::<Result<Vec<_>>>()?;
    let mut thread_counts = vec![1];
    if a.search.threads > 1 {
        thread_counts.push(a.search.threads);
    }
    let p = a.search.p;
    let mut report = RunReport::new("bench");
    report.p = Some(p);
    report.mode = Some(if a.untargeted {
        Mode::Untargeted
    } else {
        Mode::Targeted
    });
    let mut lines = vec![format!(
        "{:<28} {:<10} {:>7} {:>12} {:>12} {:>8}",
        "shape", "method", "threads", "mean ms", "min ms", "speedup"
    )];
    for dims in &shapes {
        let net = random_network(dims, a.search.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.search.seed.wrapping_add(1));
        let x0: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = argmax(&net.forward(&x0)?);
        for m in methods(a.method, &net, false) {
            report.methods.push(m);
            let mut base = None;
            for &threads in &thread_counts {
                let cfg = SearchConfig {
                    threads,
                    ..search_config(&a.search, None)
                };
                let times = (0..a.repeats)
                    .map(|_| time_once(&net, &x0, c, m, a.untargeted, &cfg, p))
                    .collect::<Result<Vec<_>>>()?;
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                let min = times.iter().copied().fold(f64::INFINITY, f64::min);
                let base_mean = *base.get_or_insert(mean);
                let row = BenchRow {
                    dims: dims.clone(),
                    method: m,
                    threads,
                    repeats: a.repeats,
                    mean_ms: mean,
                    min_ms: min,
                    speedup: Some(base_mean / mean),
                };
                lines.push(format!(
                    "{:<28} {:<10} {:>7} {:>12.2} {:>12.2} {:>8.2}",
                    dims.iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join("-"),
                    m.as_str(),
                    threads,
                    mean,
                    min,
                    base_mean / mean
                ));
                report.bench.push(row);
            }
        }
    }
    report.methods.dedup();
    if let Some(path) = &a.out {
        report.save(path).map_err(|e| with_path(e, path))?;
    }
    print_out(&lines.join("\n"))
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let dims = parse_dims(&a.dims)?;
    let net = random_network(&dims, a.seed)?;
    net.save(&a.out).map_err(|e| with_path(e, &a.out))?;
    print_out(&format!(
        "wrote {} ({} layers, dims {:?})",
        a.out.display(),
        net.depth(),
        net.dims()
    ))?;
    if let Some(path) = &a.input_out {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(0.0..1.0)).collect();
        let label = argmax(&net.forward(&input)?);
        InputFile {
            input,
            label: Some(label),
        }
        .save(path)
        .map_err(|e| with_path(e, path))?;
        print_out(&format!(
            "wrote {} (predicted class {label})",
            path.display()
        ))?;
    }
    Ok(())
}
