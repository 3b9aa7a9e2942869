//! Subcommand bodies. Each returns a [`Bundle`] and a [`Status`]; writing
//! happens in `main`.

use std::path::{Path, PathBuf};

use maxstab::censor_sets::{ElementarySet, PredictedLabel, RateVerdict, SetError};
use maxstab::coupling_lab::{
    build_time_change, classify_set, maxima_correspondence, maximizer_match_prob, pushforward_check,
    time_changed_censored, CellMasses, CorrespondenceCounts, Verdict,
};
use maxstab::exec::{map_replicas, Execution};
use maxstab::path_engine::TimeGrid;
use maxstab::rng;
use maxstab::sign_field::{discrete_mc, run_oracle_matrix, verify_probability_formula, OracleMatrix};
use maxstab::spectral_pruning::{
    build_population, check_retention_bound, run_pruning, run_pruning_b, validate_preset, PruneMode,
};
use maxstab::stats_report::{interval_trend, trend, Estimate, EvidenceRow};
use serde_json::json;

use crate::config::{
    ClassifyConfig, FormulaConfig, GenerateConfig, MatchProbConfig, OracleConfig, PruneConfig, ReportConfig,
    TimeChangeConfig,
};
use crate::output::{read_evidence, stamp_field, Bundle};
use crate::svg::{line_chart, Series};
use crate::CliError;

const SHIPPED_MATRIX: &str = include_str!("../../../fixtures/oracle_matrix.toml");

/// How a run ended. Files are written in every case.
#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Success(String),
    /// UNDECIDED or GAP verdicts.
    Inconclusive(String),
    /// A check failed; the bundle holds the evidence.
    Failed(String),
}

pub type Outcome = Result<(Bundle, Status), CliError>;

fn series_of(rows: &[EvidenceRow], label: &str) -> Series {
    Series {
        label: label.to_string(),
        points: rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| (r.param, r.mean, r.ci_lo, r.ci_hi))
            .collect(),
    }
}

pub fn classify(cfg: &ClassifyConfig, seed: u64, exec: Execution) -> Outcome {
    let built = cfg.set.build(seed)?;
    let c = classify_set(&built.set, &cfg.protocol, seed, exec)?;
    let mut b = Bundle::default();
    b.rows = c.estimates().iter().map(|(p, e)| e.row(*p)).collect();
    b.put("set_descriptor", built.set.descriptor());
    b.put("verdict", c.verdict);
    b.put(
        "thresholds",
        json!({ "theta_stable": cfg.protocol.theta_stable, "theta_unstable": cfg.protocol.theta_unstable }),
    );
    b.put("measure", c.measure);
    b.put("levels", &cfg.protocol.levels);
    b.put("replicas", cfg.protocol.replicas);
    b.put("shared_trend", c.shared.as_ref().map(|t| t.verdict));
    b.put("containment_trend", c.containment.as_ref().map(|t| t.verdict));
    b.put("shared_verdict", c.shared_verdict);
    b.put("containment_verdict", c.containment_verdict);
    b.put("predicted", built.predicted);
    if !b.rows.is_empty() {
        let series: Vec<Series> = ["shared", "containment", "dual_containment"]
            .iter()
            .map(|l| series_of(&b.rows, l))
            .collect();
        b.charts.push((
            "ladder".into(),
            line_chart(&format!("{} set: {}", built.set.kind_name(), c.verdict), "grid level", "fraction", &series),
        ));
    }
    let msg = format!("verdict {}", c.verdict);
    let status = if c.verdict == Verdict::Undecided {
        Status::Inconclusive(msg)
    } else {
        Status::Success(msg)
    };
    Ok((b, status))
}

pub fn match_prob(cfg: &MatchProbConfig, seed: u64, exec: Execution) -> Outcome {
    let built = cfg.set.build(seed)?;
    let window = built.set.window();
    let g = match &cfg.g {
        Some(iv) => Some(ElementarySet::new(window, iv.iter().map(|p| (p[0], p[1])).collect())?),
        None => None,
    };
    let mut b = Bundle::default();
    let mut ladder = Vec::new();
    for &level in &cfg.levels {
        let grid = TimeGrid::new(window.0, window.1, level)?;
        let r = maximizer_match_prob(
            &built.set,
            (cfg.interval[0], cfg.interval[1]),
            g.as_ref(),
            &grid,
            &cfg.config,
            cfg.replicas,
            seed,
            exec,
        )?;
        b.rows.push(r.estimate.row(level as f64));
        b.rows.push(r.none_rate.row(level as f64));
        ladder.push((level as f64, r.estimate));
    }
    b.put("set_descriptor", built.set.descriptor());
    b.put("interval", cfg.interval);
    b.put(
        "estimates",
        ladder
            .iter()
            .map(|(l, e)| json!({ "level": l, "mean": e.mean(), "stderr": e.stderr(), "ci": e.ci() }))
            .collect::<Vec<_>>(),
    );
    let verdict = (ladder.len() >= 3).then(|| trend(&ladder)).transpose()?.map(|t| t.verdict);
    b.put("trend", verdict);
    b.charts.push((
        "match_prob".into(),
        line_chart("maximizer match probability", "grid level", "probability", &[series_of(&b.rows, "match")]),
    ));
    let last = ladder.last().map(|(_, e)| e.mean()).unwrap_or(f64::NAN);
    Ok((b, Status::Success(format!("top-level estimate {last:.4}"))))
}

pub fn verify_formula(cfg: &FormulaConfig, seed: u64, exec: Execution) -> Outcome {
    let built = cfg.set.build(seed)?;
    let w = built.set.window();
    let grid = TimeGrid::new(w.0, w.1, cfg.level)?;
    let r = verify_probability_formula(&built.set, &cfg.functional, &grid, &cfg.config, &cfg.options, seed, exec)?;
    let mut b = Bundle::default();
    let p = cfg.level as f64;
    b.rows.push(r.lhs.row(p));
    b.rows.push(r.rhs.row(p));
    for (k, e) in r.rhs_pieces.iter().enumerate() {
        let mut row = e.row(p);
        row.label = format!("rhs_piece_{k}");
        b.rows.push(row);
    }
    b.put("set_descriptor", built.set.descriptor());
    b.put("lhs", json!({ "mean": r.lhs.mean(), "stderr": r.lhs.stderr() }));
    b.put("rhs", json!({ "mean": r.rhs.mean(), "stderr": r.rhs.stderr() }));
    b.put(
        "rhs_product",
        json!({ "value": r.rhs_product, "stderr": r.rhs_product_stderr }),
    );
    b.put("compatible", r.compatible);
    let msg = format!(
        "lhs {:.4} ± {:.4}, rhs {:.4} ± {:.4}, compatible {}",
        r.lhs.mean(),
        r.lhs.stderr(),
        r.rhs.mean(),
        r.rhs.stderr(),
        r.compatible
    );
    Ok((b, if r.compatible { Status::Success(msg) } else { Status::Failed(msg) }))
}

pub fn oracle(cfg: &OracleConfig, seed: u64, exec: Execution) -> Outcome {
    let (text, source) = match &cfg.fixture {
        Some(p) => (std::fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?, p.display().to_string()),
        None => (SHIPPED_MATRIX.to_string(), "shipped".to_string()),
    };
    let matrix: OracleMatrix =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("fixture {source}: {e}")))?;
    let results = run_oracle_matrix(&matrix)?;
    let matches = results.iter().filter(|r| r.equal).count();
    let mut b = Bundle::default();
    let line = format!("{matches}/{} exact matches", results.len());
    b.put("result", &line);
    b.put("fixture", &source);
    b.put("fixture_version", matrix.version);
    b.put("cases", &results);
    if cfg.mc_replicas > 0 {
        for (i, case) in matrix.cases.iter().enumerate() {
            let s = rng::derive_seed(seed, rng::tag::ORACLE_MC, i as u64);
            let (l, r) = discrete_mc(case, cfg.mc_replicas, s, exec)?;
            for (label, e) in [("lhs_mc", l), ("rhs_mc", r)] {
                let mut row = e.row(i as f64);
                row.label = label.into();
                b.rows.push(row);
            }
        }
    }
    let status = if matches == results.len() {
        Status::Success(line)
    } else {
        Status::Failed(line)
    };
    Ok((b, status))
}

/// `count` dyadic intervals of the window over levels 2..=6.
fn dyadic_intervals(window: (f64, f64), count: usize) -> Vec<(f64, f64)> {
    let width = window.1 - window.0;
    (0..count)
        .map(|k| {
            let n = 1usize << (2 + k % 5);
            let i = (k * 7) % n;
            (
                window.0 + width * i as f64 / n as f64,
                window.0 + width * (i + 1) as f64 / n as f64,
            )
        })
        .collect()
}

pub fn time_change(cfg: &TimeChangeConfig, seed: u64, exec: Execution) -> Outcome {
    let built = cfg.set.build(seed)?;
    let set = &built.set;
    let w = set.window();
    let grid = TimeGrid::new(w.0, w.1, cfg.level)?;
    let tc = build_time_change(set, &grid)?;
    let pf = pushforward_check(&tc, set, &dyadic_intervals(w, cfg.intervals))?;

    let masses = CellMasses::new(set, &grid)?;
    let fill = masses.node_fill().to_vec();
    let m = tc.range().nodes();
    let checkpoints: Vec<usize> = (1..=cfg.checkpoints).map(|k| k * (m - 1) / cfg.checkpoints.max(1)).collect();
    let r = cfg.config.radius(cfg.level);
    let per = map_replicas(cfg.replicas, exec, |i| {
        let mut s = rng::stream(seed, rng::tag::TIME_CHANGE, i);
        let p = masses.draw_core(&mut s);
        let y = time_changed_censored(&p.censored, &tc).expect("grid matches");
        let at: Vec<f64> = checkpoints.iter().map(|&j| y.values[j]).collect();
        let c = if i < cfg.correspondence_replicas {
            maxima_correspondence(&p.censored, &fill, &y, &tc, r, r, cfg.config.eta)
        } else {
            CorrespondenceCounts::default()
        };
        (at, c)
    });
    let mut b = Bundle::default();
    let mut worst_z = 0.0f64;
    for (k, &j) in checkpoints.iter().enumerate() {
        let s = tc.range().node_time(j);
        let sq = Estimate::from_values("second_moment", per.iter().map(|(v, _)| v[k] * v[k]));
        if sq.stderr() > 0.0 {
            worst_z = worst_z.max((sq.mean() - s).abs() / sq.stderr());
        }
        b.rows.push(sq.row(s));
    }
    let mut cc = CorrespondenceCounts::default();
    for (_, c) in &per {
        cc.censored += c.censored;
        cc.censored_matched += c.censored_matched;
        cc.changed += c.changed;
        cc.changed_matched += c.changed_matched;
    }
    let rate = cc.rate();
    b.rows.push(rate.row(cfg.level as f64));
    let pass = pf.pass && worst_z <= 3.0;
    b.put("set_descriptor", set.descriptor());
    b.put("range_length", tc.total());
    b.put(
        "pushforward",
        json!({ "intervals": pf.rows.len(), "max_error": pf.max_error, "tolerance": pf.tolerance, "pass": pf.pass }),
    );
    b.put("variance_worst_z", worst_z);
    b.put("correspondence", json!({ "rate": rate.mean(), "stderr": rate.stderr(), "counts": cc }));
    b.put("pass", pass);
    let identity: Vec<(f64, f64, f64, f64)> = b
        .rows
        .iter()
        .filter(|r| r.label == "second_moment")
        .map(|r| (r.param, r.param, f64::NAN, f64::NAN))
        .collect();
    b.charts.push((
        "second_moment".into(),
        line_chart(
            "time-changed censored path",
            "s",
            "E[Y(s)^2]",
            &[
                series_of(&b.rows, "second_moment"),
                Series {
                    label: "s".into(),
                    points: identity,
                },
            ],
        ),
    ));
    let msg = format!(
        "pushforward max error {:.2e} (tol {:.2e}), variance worst |z| {worst_z:.2}, correspondence {:.4}",
        pf.max_error,
        pf.tolerance,
        rate.mean()
    );
    Ok((b, if pass { Status::Success(msg) } else { Status::Failed(msg) }))
}

pub fn generate_set(cfg: &GenerateConfig, seed: u64) -> Outcome {
    let mut b = Bundle::default();
    let built = match cfg.set.build(seed) {
        Ok(x) => x,
        Err(SetError::Certification {
            alpha,
            estimate,
            lo,
            hi,
            report,
        }) => {
            b.put(
                "certification_failed",
                json!({ "alpha": alpha, "estimate": estimate, "band": [lo, hi], "report": report }),
            );
            return Ok((
                b,
                Status::Failed(format!("certification failed: exponent {estimate:.3} outside [{lo:.3}, {hi:.3}]")),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let desc = built.set.descriptor();
    let text = toml::to_string(&desc).map_err(|e| CliError::Config(e.to_string()))?;
    b.files.push(("set.toml".into(), text));
    b.put("set_descriptor", &desc);
    b.put("kind", built.set.kind_name());
    b.put("measure", built.set.total_measure());
    b.put("predicted", built.predicted);
    b.put("truncation_bias", built.truncation_bias);
    let mut gap = built.predicted == Some(PredictedLabel::Gap);
    if let Some(r) = &built.certification {
        gap |= r.verdict == RateVerdict::Gap;
        b.put(
            "certification",
            json!({
                "exponent": r.exponent,
                "band": r.band,
                "verdict": r.verdict,
                "slope_i": r.slope_i,
                "slope_ii": r.slope_ii,
                "integral": r.integral,
            }),
        );
        let n = r.profiles.len() as u64;
        for (label, curve) in [("ratio_i", &r.curve_i), ("ratio_ii", &r.curve_ii)] {
            for (&h, &v) in r.scales.iter().zip(curve.iter()) {
                let x = (1.0 / h).ln().ln();
                b.rows.push(EvidenceRow {
                    label: label.into(),
                    param: x,
                    n,
                    mean: v,
                    stderr: 0.0,
                    ci_lo: v,
                    ci_hi: v,
                });
            }
        }
        b.charts.push((
            "certification".into(),
            line_chart(
                &format!("density ratios, verdict {}", r.verdict),
                "ln ln(1/h)",
                "median ratio",
                &[series_of(&b.rows, "ratio_i"), series_of(&b.rows, "ratio_ii")],
            ),
        ));
    }
    let msg = format!("{} set, measure {:.6}", built.set.kind_name(), built.set.total_measure());
    Ok((b, if gap { Status::Inconclusive(format!("{msg}, GAP")) } else { Status::Success(msg) }))
}

pub fn prune(cfg: &PruneConfig, seed: u64, exec: Execution) -> Outcome {
    let preset = &cfg.preset;
    let validation = validate_preset(preset)?;
    let mut b = Bundle::default();
    let mode = match preset.mode {
        PruneMode::TheoremA { .. } => "theorem_a",
        PruneMode::TheoremB { .. } => "theorem_b",
    };
    b.put("mode", mode);
    b.put("validation", &validation);
    if !validation.all_pass {
        let failed: Vec<&str> = validation.conditions.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Ok((b, Status::Failed(format!("preset fails {}", failed.join(", ")))));
    }
    let pop = build_population(&cfg.profiles, preset, seed)?;
    let (stats, hits) = match preset.mode {
        PruneMode::TheoremA { .. } => (run_pruning(&pop, preset, cfg.runs, seed, exec)?, Vec::new()),
        PruneMode::TheoremB { .. } => {
            let r = run_pruning_b(&pop, &cfg.targets, preset, cfg.runs, seed, exec)?;
            (r.survival, r.hits)
        }
    };
    let n = stats.runs() as f64;
    let mut worst = 0.0f64;
    let mut configs = Vec::new();
    for (k, name) in stats.names.iter().enumerate() {
        for m in preset.levels() {
            let e = stats.survival(k, m);
            if let Some(q) = stats.oracle_at(k, m) {
                let sigma = (q * (1.0 - q) / n).sqrt();
                let d = (e.mean() - q).abs();
                if sigma > 0.0 {
                    worst = worst.max(d / sigma);
                }
            }
            let mut row = e.row(m as f64);
            row.label = format!("survival {name}");
            b.rows.push(row);
        }
        let m = preset.start_level;
        configs.push(json!({
            "name": name,
            "singleton": stats.singleton[k],
            "survival": stats.survival(k, m).mean(),
            "oracle": stats.oracle_at(k, m),
        }));
    }
    b.put("runs", stats.runs());
    b.put("configs", configs);
    b.put("oracle_worst_z", worst);
    for h in &hits {
        let mut row = h.hit.row(h.fraction);
        row.label = format!("hit {}", h.target);
        b.rows.push(row);
    }
    b.put("hits", &hits);
    let mut status = Status::Success(format!("{} configurations, oracle worst |z| {worst:.2}", stats.names.len()));
    if !cfg.retention_ms.is_empty() {
        let rep = check_retention_bound(&stats, &validation, &cfg.retention_ms)?;
        if !rep.all_pass {
            status = Status::Failed("retention bound fails".into());
        }
        b.put("retention", &rep);
    }
    let series: Vec<Series> = stats
        .names
        .iter()
        .take(8)
        .map(|name| series_of(&b.rows, &format!("survival {name}")))
        .collect();
    b.charts.push(("survival".into(), line_chart("survival from level m", "m", "survival", &series)));
    Ok((b, status))
}

fn evidence_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("evidence.csv")
    } else {
        p.to_path_buf()
    }
}

fn chart_stem(p: &Path, k: usize) -> String {
    let name: String = p
        .components()
        .filter_map(|c| c.as_os_str().to_str())
        .filter(|c| *c != "evidence.csv" && *c != "." && *c != "..")
        .last()
        .unwrap_or("input")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{k:02}_{name}")
}

pub fn report(cfg: &ReportConfig) -> Outcome {
    if cfg.inputs.is_empty() {
        return Err(CliError::Config("report needs at least one input".into()));
    }
    let mut b = Bundle::default();
    let mut entries = Vec::new();
    for (k, input) in cfg.inputs.iter().enumerate() {
        let ev = read_evidence(&evidence_path(input))?;
        let summary_path = evidence_path(input).with_file_name("summary.json");
        let summary: Option<serde_json::Value> = std::fs::read_to_string(&summary_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let header = ev.header.as_deref().unwrap_or("");
        let mut labels: Vec<String> = Vec::new();
        for r in &ev.rows {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        let trends: serde_json::Map<String, serde_json::Value> = labels
            .iter()
            .map(|l| {
                let cis: Vec<(f64, f64)> = ev.rows.iter().filter(|r| &r.label == l).map(|r| (r.ci_lo, r.ci_hi)).collect();
                let t = interval_trend(&cis).ok().map(|(t, _, _)| t.to_string());
                (l.clone(), json!(t))
            })
            .collect();
        entries.push(json!({
            "input": input.display().to_string(),
            "command": header.split_whitespace().nth(1),
            "config_hash": stamp_field(header, "config_hash"),
            "seed": stamp_field(header, "seed").and_then(|s| s.parse::<u64>().ok()),
            "rows": ev.rows.len(),
            "verdict": summary.as_ref().and_then(|s| s.get("verdict").cloned()),
            "trends": trends,
        }));
        let stem = chart_stem(input, k);
        if !ev.rows.is_empty() {
            let series: Vec<Series> = labels.iter().take(8).map(|l| series_of(&ev.rows, l)).collect();
            b.charts.push((stem.clone(), line_chart(&input.display().to_string(), "param", "mean", &series)));
        }
        for mut r in ev.rows {
            r.label = format!("{stem}/{}", r.label);
            b.rows.push(r);
        }
    }
    b.put("inputs", entries);
    let msg = format!("{} inputs aggregated", cfg.inputs.len());
    Ok((b, Status::Success(msg)))
}
