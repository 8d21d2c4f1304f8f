use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tukey_gh::eval::{self, EvalSummary, IntervalVariant};
use tukey_gh::io::{load_csv_with_extra, Dataset, ExperimentConfig, Split};
use tukey_gh::nn;
use tukey_gh::synth::{self, GAndHFunctions, StudentTFunctions};
use tukey_gh::{Error, Matrix, TghParams, TrainedModel};

use crate::svg::{self, Series, Style};
use crate::{say, CliError, Design, SplitArg, VariantArg};

type Result<T> = std::result::Result<T, CliError>;

/// Alphas reported in the evaluation coverage table.
const COVERAGE_ALPHAS: [f64; 5] = [0.5, 0.2, 0.1, 0.05, 0.01];
const RESIDUAL_BINS: usize = 10;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    write_text(path, &(text + "\n"))
}

/// `<path><suffix>`, keeping any existing extension.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn simulate(design: Design, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let data = match design {
        Design::Gandh => synth::generate_gandh(n, &GAndHFunctions::default(), seed)?,
        Design::StudentT => synth::generate_student_t(n, &StudentTFunctions::default(), seed)?,
        Design::Spatial => synth::generate_spatial(n, seed)?,
    };
    data.save(out)?;
    say!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn subset_rows(x: &Matrix, y: &[f64], idx: &[usize]) -> (Matrix, Vec<f64>) {
    (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    lr: f64,
    train_loss: f64,
    val_loss: f64,
}

pub fn train(
    config: &Path,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    render_svg: bool,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| match e {
        Error::Io { .. } => CliError::Core(e),
        other => CliError::Usage(format!("{}: {other}", config.display())),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let features = cfg.all_features();
    let extra = cfg.split.extra_columns(&features, &cfg.target);
    let mut ds = load_csv_with_extra(data, &cfg.target, &features, &extra)?;
    let (model, history) = TrainedModel::fit(&cfg, &mut ds)?;
    model.save(out)?;

    let hist_path = with_suffix(out, ".history.csv");
    let mut w = csv::Writer::from_writer(create(&hist_path)?);
    for e in &history.epochs {
        w.serialize(HistoryRow {
            epoch: e.epoch,
            lr: e.lr,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
        })
        .map_err(|e| CliError::Core(e.into()))?;
    }
    w.flush().map_err(io_err(&hist_path))?;
    if render_svg {
        let curve = |label: &str, f: fn(&nn::EpochRecord) -> f64| Series {
            label: label.into(),
            points: history.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect(),
            style: Style::Line,
        };
        let text = svg::render(
            "Loss over epochs",
            "epoch",
            "mean loss",
            &[curve("train", |e| e.train_loss), curve("validation", |e| e.val_loss)],
        );
        write_text(&with_suffix(out, ".history.svg"), &text)?;
    }

    let best = history.best_epoch.map(|b| &history.epochs[b]);
    say!(
        "trained {} epochs on {} rows ({} validation, {} dropped); best epoch {}, validation loss {}",
        history.epochs.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Val).len(),
        ds.dropped_rows,
        best.map_or("-".into(), |b| b.epoch.to_string()),
        best.map_or("-".into(), |b| b.val_loss.to_string()),
    );
    Ok(())
}

/// Rows of `data` selected by `split`, with raw features and targets, under the model's
/// own split rule.
fn load_split(model: &TrainedModel, data: &Path, split: SplitArg) -> Result<Dataset> {
    let extra = model.split.extra_columns(&model.features, &model.target);
    let mut ds = load_csv_with_extra(data, &model.target, &model.features, &extra)?;
    let which = match split {
        SplitArg::All => return Ok(ds),
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    ds.apply_split(&model.split)?;
    let idx = ds.indices(which);
    if idx.is_empty() {
        return Err(CliError::Core(Error::EmptySplit(which.name())));
    }
    let (x, y) = subset_rows(&ds.x, &ds.y, &idx);
    ds.x = x;
    ds.y = y;
    ds.aux.iter_mut().for_each(|(_, v)| *v = idx.iter().map(|&i| v[i]).collect());
    ds.split = vec![which; idx.len()];
    Ok(ds)
}

pub fn evaluate(
    model_path: &Path,
    data: &Path,
    split: SplitArg,
    out: &Path,
    render_svg: bool,
) -> Result<()> {
    let model = TrainedModel::load(model_path)?;
    let ds = load_split(&model, data, split)?;
    let params = model.predict_params(&ds.x)?;
    let report = eval::residuals(&ds.y, &params, &model.likelihood.solver)?;

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let res_path = out.join("residuals.csv");
    eval::write_residual_csv(create(&res_path)?, &ds.y, &params, &report)?;
    eval::write_qq_csv(create(&out.join("qq.csv"))?, &report)?;

    let bins = model
        .features
        .iter()
        .enumerate()
        .map(|(j, name)| {
            Ok((
                name.clone(),
                eval::residual_bins(&ds.x.column(j), &report.z_hat, RESIDUAL_BINS)?,
            ))
        })
        .collect::<tukey_gh::Result<Vec<_>>>()?;
    let summary = EvalSummary {
        n: ds.len(),
        mean_nll: report.mean_nll,
        ks_statistic: report.ks_statistic,
        ks_critical_1pct: eval::ks_critical_value(0.01, ds.len())?,
        coverage: eval::coverage_table(&params, &ds.y, &COVERAGE_ALPHAS)?,
        bins,
    };
    write_json(&out.join("summary.json"), &summary)?;
    if render_svg {
        let lim = report
            .qq_pairs
            .iter()
            .map(|p| p.0.abs())
            .fold(0.0, f64::max);
        let text = svg::render(
            "QQ plot of residuals",
            "standard normal quantile",
            "residual quantile",
            &[
                Series {
                    label: "residuals".into(),
                    points: report.qq_pairs.clone(),
                    style: Style::Points,
                },
                Series {
                    label: "identity".into(),
                    points: vec![(-lim, -lim), (lim, lim)],
                    style: Style::Line,
                },
            ],
        );
        write_text(&out.join("qq.svg"), &text)?;
    }
    say!(
        "n = {}, mean NLL = {}, KS = {} (1% critical value {})",
        summary.n, summary.mean_nll, summary.ks_statistic, summary.ks_critical_1pct
    );
    Ok(())
}

#[derive(Serialize)]
struct IntervalRow {
    y: f64,
    lower: f64,
    upper: f64,
    gamma: f64,
    covered: bool,
}

#[derive(Serialize)]
struct IntervalSummary {
    n: usize,
    alpha: f64,
    variant: IntervalVariant,
    coverage: f64,
    mean_length: f64,
}

pub fn intervals(
    model_path: &Path,
    data: &Path,
    alpha: f64,
    variant: VariantArg,
    split: SplitArg,
    out: &Path,
) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha {alpha} must lie in (0, 1)")));
    }
    let variant = match variant {
        VariantArg::Symmetric => IntervalVariant::Symmetric,
        VariantArg::Shortest => IntervalVariant::Shortest,
    };
    let model = TrainedModel::load(model_path)?;
    let ds = load_split(&model, data, split)?;
    let params = model.predict_params(&ds.x)?;
    let ivs = eval::intervals(&params, alpha, variant)?;

    let mut w = csv::Writer::from_writer(create(out)?);
    for (iv, &y) in ivs.iter().zip(&ds.y) {
        w.serialize(IntervalRow {
            y,
            lower: iv.lower,
            upper: iv.upper,
            gamma: iv.gamma,
            covered: iv.contains(y),
        })
        .map_err(|e| CliError::Core(e.into()))?;
    }
    w.flush().map_err(io_err(out))?;

    let summary = IntervalSummary {
        n: ds.len(),
        alpha,
        variant,
        coverage: eval::coverage(&ivs, &ds.y)?,
        mean_length: ivs.iter().map(|iv| iv.length()).sum::<f64>() / ivs.len() as f64,
    };
    write_json(&out.with_extension("json"), &summary)?;
    say!(
        "coverage {} at nominal {} over {} rows, mean length {}",
        summary.coverage,
        1.0 - alpha,
        summary.n,
        summary.mean_length
    );
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("--grid {spec:?} must look like lo:hi:n with lo < hi, n >= 2"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(bad());
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) || n < 2 || !hi.is_finite() || !lo.is_finite() {
        return Err(bad());
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

fn parse_points(spec: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    spec.split(';')
        .map(|row| {
            let vals = row
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("cannot parse feature row {row:?}")))?;
            if vals.len() != width {
                return Err(CliError::Usage(format!(
                    "feature row {row:?} has {} values, the model expects {width}",
                    vals.len()
                )));
            }
            Ok(vals)
        })
        .collect()
}

#[derive(Serialize)]
struct CurveSummary {
    features: Vec<f64>,
    params: TghParams,
    /// Trapezoid integral of the curve over the grid.
    mass_on_grid: f64,
}

pub fn density(model_path: &Path, features: &str, grid: &str, out: &Path) -> Result<()> {
    let model = TrainedModel::load(model_path)?;
    let grid = parse_grid(grid)?;
    let points = parse_points(features, model.features.len())?;
    let params = model.predict_params(&Matrix::from_rows(&points))?;

    let mut w = csv::Writer::from_writer(create(out)?);
    let mut header = vec!["point".to_string()];
    header.extend(model.features.iter().cloned());
    header.extend(["y".to_string(), "density".to_string()]);
    w.write_record(&header).map_err(|e| CliError::Core(e.into()))?;
    let mut curves = Vec::with_capacity(points.len());
    for (k, (pt, p)) in points.iter().zip(&params).enumerate() {
        let d = eval::density_curve(p, &grid, &model.likelihood.solver)?;
        for (y, v) in grid.iter().zip(&d) {
            let mut rec = vec![k.to_string()];
            rec.extend(pt.iter().map(|v| v.to_string()));
            rec.extend([y.to_string(), v.to_string()]);
            w.write_record(&rec).map_err(|e| CliError::Core(e.into()))?;
        }
        let mass = grid
            .windows(2)
            .zip(d.windows(2))
            .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
            .sum();
        curves.push(CurveSummary {
            features: pt.clone(),
            params: *p,
            mass_on_grid: mass,
        });
    }
    w.flush().map_err(io_err(out))?;
    write_json(&out.with_extension("json"), &curves)?;
    say!("wrote {} density curves to {}", curves.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        for bad in ["1:0:3", "0:1:1", "0:1", "a:1:3"] {
            assert!(matches!(parse_grid(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn point_parsing() {
        assert_eq!(
            parse_points("0.1, 2;3,4", 2).unwrap(),
            vec![vec![0.1, 2.0], vec![3.0, 4.0]]
        );
        assert!(parse_points("0.1", 2).is_err());
        assert!(parse_points("x,1", 2).is_err());
    }
}
