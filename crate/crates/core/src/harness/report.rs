//! CSV logs, SVG reward curves and run comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, AggregateRow, Checkpoint, EpisodeLog, ExperimentConfig, HarnessError, TrialSummary};
use crate::qlearn::PhaseAgent;

pub const LOG_COLUMNS: [&str; 6] = ["episode", "mean_reward", "actor_grad_norm", "critic_grad_norm", "gamma", "wall_time"];
pub const AGGREGATE_COLUMNS: [&str; 5] = ["episode", "mean", "max", "min", "trials"];
pub const STATUS_COLUMNS: [&str; 6] = ["trial", "status", "episodes", "best_episode", "best_mean_reward", "detail"];
pub const COMPARISON_COLUMNS: [&str; 4] = ["run", "best_episode", "best_mean_reward", "difference_from_first"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_log(path: &Path, log: &[EpisodeLog]) -> Result<(), HarnessError> {
    write_csv(
        path,
        &LOG_COLUMNS,
        log.iter().map(|e| {
            vec![
                e.episode.to_string(),
                e.mean_reward.to_string(),
                opt(e.actor_grad_norm),
                opt(e.critic_grad_norm),
                opt(e.gamma),
                e.wall_time.to_string(),
            ]
        }),
    )
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    write_csv(
        path,
        &AGGREGATE_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.episode.to_string(),
                r.mean.to_string(),
                r.max.to_string(),
                r.min.to_string(),
                r.trials.to_string(),
            ]
        }),
    )
}

/// Reads named columns of a CSV file, failing on the first missing one.
pub fn read_columns(path: &Path, columns: &[&str]) -> Result<Vec<Vec<String>>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let idx = columns
        .iter()
        .map(|c| {
            header.iter().position(|h| h == *c).ok_or_else(|| HarnessError::MissingColumn {
                path: path.to_path_buf(),
                column: c.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect())
        })
        .collect()
}

fn parse<T: std::str::FromStr>(path: &Path, column: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Csv {
        path: path.to_path_buf(),
        message: format!("bad `{column}` value {value:?}"),
    })
}

pub fn read_log(path: &Path) -> Result<Vec<EpisodeLog>, HarnessError> {
    let optional = |column: &str, v: &str| -> Result<Option<f64>, HarnessError> {
        if v.is_empty() {
            Ok(None)
        } else {
            parse(path, column, v).map(Some)
        }
    };
    read_columns(path, &LOG_COLUMNS)?
        .iter()
        .map(|r| {
            Ok(EpisodeLog {
                episode: parse(path, "episode", &r[0])?,
                mean_reward: parse(path, "mean_reward", &r[1])?,
                actor_grad_norm: optional("actor_grad_norm", &r[2])?,
                critic_grad_norm: optional("critic_grad_norm", &r[3])?,
                gamma: optional("gamma", &r[4])?,
                wall_time: parse(path, "wall_time", &r[5])?,
            })
        })
        .collect()
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    read_columns(path, &AGGREGATE_COLUMNS)?
        .iter()
        .map(|r| {
            Ok(AggregateRow {
                episode: parse(path, "episode", &r[0])?,
                mean: parse(path, "mean", &r[1])?,
                max: parse(path, "max", &r[2])?,
                min: parse(path, "min", &r[3])?,
                trials: parse(path, "trials", &r[4])?,
            })
        })
        .collect()
}

pub fn trial_log_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join(format!("trial_{trial}.csv"))
}

/// Writes every artifact of a finished experiment into `dir`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, summary: &TrialSummary) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config.to_toml()).map_err(io_err(&config_path))?;
    for t in &summary.trials {
        write_log(&trial_log_path(dir, t.trial), &t.log)?;
        if let Some(cp) = &t.checkpoint {
            let cdir = dir.join("checkpoints");
            fs::create_dir_all(&cdir).map_err(io_err(&cdir))?;
            let (name, text) = match cp {
                Checkpoint::Ddpg(text) => (format!("trial_{}_ddpg.txt", t.trial), text),
                Checkpoint::Qlearn(text) => (format!("trial_{}_qtables.txt", t.trial), text),
            };
            let path = cdir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    write_csv(
        &dir.join("trial_status.csv"),
        &STATUS_COLUMNS,
        summary.trials.iter().map(|t| {
            let best = t.best_episode();
            vec![
                t.trial.to_string(),
                t.status.label().to_string(),
                t.log.len().to_string(),
                best.map_or_else(String::new, |b| b.0.to_string()),
                opt(best.map(|b| b.1)),
                t.status.detail(),
            ]
        }),
    )?;
    write_aggregate(&dir.join("aggregate.csv"), &summary.aggregate)?;
    let svg_path = dir.join("reward_curve.svg");
    let svg = plot_curves(
        &format!("{} on {}", summary.algorithm.name(), config.scenario),
        &[Curve::from_aggregate(summary.algorithm.name(), &summary.aggregate)],
    );
    fs::write(&svg_path, svg).map_err(io_err(&svg_path))
}

/// Plain-text dump of every agent's table, one row per state.
pub fn qtables_text(agents: &[PhaseAgent]) -> String {
    let mut out = String::from("trafficgrad-qtables 1\n");
    for a in agents {
        let dets: Vec<String> = a.detectors.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "agent {} detectors {}", a.phase, dets.join(" "));
        for s in 0..a.table.n_states() {
            let row: Vec<String> = a.table.row(s).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{s} {}", row.join(" "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(episode, mean, min, max)`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl Curve {
    pub fn from_aggregate(label: &str, rows: &[AggregateRow]) -> Self {
        Curve {
            label: label.to_string(),
            points: rows.iter().map(|r| (r.episode as f64, r.mean, r.min, r.max)).collect(),
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Mean reward per episode with a shaded min/max band for each curve.
pub fn plot_curves(title: &str, curves: &[Curve]) -> String {
    let (w, h, m) = (720.0, 420.0, 56.0);
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, 0.0f64, 0.0f64);
    for &(x, _, lo, hi) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(lo);
        y_max = y_max.max(hi);
    }
    if y_max - y_min < 1e-12 {
        y_max += 1.0;
        y_min -= 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y_min) / (y_max - y_min) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<line x1="{m}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        sy(0.0),
        w - m
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{m} {m},{0} {1},{0}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.4}</text>"#, m - 6.0, sy(y) + 4.0, y);
        let x = x_max * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.0}</text>"#, sx(x), h - m + 18.0, x);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean reward</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !c.points.is_empty() {
            let upper = c.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
            let lower = c.points.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "));
            let line: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            w - m - 140.0,
            ly,
            w - m - 122.0,
            ly + 5.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub best_episode: Option<usize>,
    pub best_mean_reward: Option<f64>,
    pub difference_from_first: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub curves: Vec<Curve>,
    pub rows: Vec<ComparisonRow>,
}

fn run_label(dir: &Path) -> String {
    let config = ExperimentConfig::load(&dir.join("config.toml")).ok();
    let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    match config {
        Some(c) => format!("{} ({})", name, c.algorithm.name()),
        None => name,
    }
}

/// Overlays the aggregate curves of several runs and tabulates the best
/// per-episode mean reward of each. Writes `comparison.svg` and
/// `comparison.csv` into `out` when given.
pub fn compare(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<Comparison, HarnessError> {
    if run_dirs.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two run directories".into()));
    }
    let mut curves = Vec::new();
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for dir in run_dirs {
        let agg = read_aggregate(&dir.join("aggregate.csv"))?;
        let label = run_label(dir);
        let best = agg
            .iter()
            .fold(None::<&AggregateRow>, |b, r| match b {
                Some(b) if b.mean >= r.mean => Some(b),
                _ => Some(r),
            })
            .map(|r| (r.episode, r.mean));
        let first = rows.first().and_then(|r| r.best_mean_reward);
        rows.push(ComparisonRow {
            run: label.clone(),
            best_episode: best.map(|b| b.0),
            best_mean_reward: best.map(|b| b.1),
            difference_from_first: match (best, first) {
                (Some(b), Some(f)) => Some(b.1 - f),
                (Some(_), None) if rows.is_empty() => Some(0.0),
                _ => None,
            },
        });
        curves.push(Curve::from_aggregate(&label, &agg));
    }
    let cmp = Comparison { curves, rows };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(io_err(out))?;
        write_csv(
            &out.join("comparison.csv"),
            &COMPARISON_COLUMNS,
            cmp.rows.iter().map(|r| {
                vec![
                    r.run.clone(),
                    r.best_episode.map_or_else(String::new, |e| e.to_string()),
                    opt(r.best_mean_reward),
                    opt(r.difference_from_first),
                ]
            }),
        )?;
        let svg_path = out.join("comparison.svg");
        fs::write(&svg_path, plot_curves("algorithm comparison", &cmp.curves)).map_err(io_err(&svg_path))?;
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Algorithm, TrialResult, TrialStatus};

    fn summary(values: &[&[f64]]) -> TrialSummary {
        let trials = values
            .iter()
            .enumerate()
            .map(|(t, rs)| TrialResult {
                trial: t,
                log: rs
                    .iter()
                    .enumerate()
                    .map(|(e, &r)| EpisodeLog {
                        episode: e,
                        mean_reward: r,
                        actor_grad_norm: Some(0.25),
                        critic_grad_norm: None,
                        gamma: Some(0.1),
                        wall_time: 0.0,
                    })
                    .collect(),
                status: TrialStatus::Completed,
                checkpoint: None,
            })
            .collect();
        TrialSummary::from_trials(Algorithm::Ddpg, trials)
    }

    #[test]
    fn log_round_trip_keeps_empty_columns() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary(&[&[0.1, -0.2, 1e-9]]);
        let path = dir.path().join("log.csv");
        write_log(&path, &s.trials[0].log).unwrap();
        assert_eq!(read_log(&path).unwrap(), s.trials[0].log);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("episode,mean_reward,actor_grad_norm,critic_grad_norm,gamma,wall_time\n"));
        assert!(text.contains(",0.25,,0.1,"));
    }

    #[test]
    fn run_artifacts_and_self_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let config = ExperimentConfig::new("network-a", Algorithm::Ddpg, 3);
        write_run(&run, &config, &summary(&[&[0.1, 0.3, 0.2], &[0.0, 0.1, 0.4]])).unwrap();
        for f in ["config.toml", "trial_0.csv", "trial_1.csv", "aggregate.csv", "trial_status.csv", "reward_curve.svg"] {
            assert!(run.join(f).exists(), "{f}");
        }
        let agg = read_aggregate(&run.join("aggregate.csv")).unwrap();
        assert_eq!(agg.len(), 3);
        assert!((agg[2].mean - 0.3).abs() < 1e-15);

        let out = dir.path().join("cmp");
        let cmp = compare(&[run.clone(), run.clone()], Some(&out)).unwrap();
        assert_eq!(cmp.curves[0], cmp.curves[1]);
        assert_eq!(cmp.rows[1].difference_from_first, Some(0.0));
        assert!(out.join("comparison.svg").exists() && out.join("comparison.csv").exists());
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a", "b"] {
            let d = dir.path().join(name);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("aggregate.csv"), "episode,mean,max,trials\n0,1,1,1\n").unwrap();
        }
        let err = compare(&[dir.path().join("a"), dir.path().join("b")], None).unwrap_err();
        assert!(matches!(&err, HarnessError::MissingColumn { column, .. } if column == "min"), "{err}");
        assert!(err.to_string().contains("`min`"));
    }

    #[test]
    fn empty_run_writes_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::new("network-a", Algorithm::Random, 0);
        write_run(dir.path(), &config, &summary(&[&[]])).unwrap();
        assert!(read_aggregate(&dir.path().join("aggregate.csv")).unwrap().is_empty());
        let svg = fs::read_to_string(dir.path().join("reward_curve.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
