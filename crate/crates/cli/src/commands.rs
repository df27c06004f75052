use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use stormsim::catalog::{load_catalog, pooled_pacf, wrap_angle, Catalog, GridSpec, StormTrack};
use stormsim::engine::{
    fit_all_censored, mrl_thresholds, read_censoring, residual_series, simulate_catalog, write_synthetic,
    ModelBundle, TerminationCause,
};
use stormsim::evt::mean_residual_life;
use stormsim::risk::{
    estimate, fraction_inside, qq_envelope, qq_envelope_grouped, spatial_density, QqRow, Region, RiskResult,
    Statistic, Subset,
};
use stormsim::Error;

use crate::config::RunConfig;
use crate::tables::{create, ensure_dir, num, provenance, Table};
use crate::CliError;

fn load(cfg: &RunConfig, path: &Path) -> Result<Catalog, CliError> {
    let (catalog, report) = load_catalog(path, cfg.paths.years_of_record)?;
    info!(
        "{}: {} rows, {} storms ({} dropped as shorter than eight points), {} years",
        path.display(),
        report.rows,
        report.storms,
        report.rejected_short,
        catalog.years_of_record
    );
    Ok(catalog)
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn fit(cfg: &RunConfig, censored: bool) -> Result<(), CliError> {
    let path = cfg.catalog()?;
    cfg.validate_engine()?;
    let catalog = load(cfg, path)?;
    let flags = if censored {
        read_censoring(path, &catalog)?
            .ok_or_else(|| CliError::Validation(format!("{} has no termination_cause column", path.display())))?
    } else {
        Vec::new()
    };
    let (bundle, report) = fit_all_censored(&catalog, &flags, &cfg.engine)?;

    ensure_dir(&cfg.paths.output_dir)?;
    let bundle_path = cfg.paths.bundle.clone().unwrap_or_else(|| out_path(cfg, "bundle.json"));
    if let Some(dir) = bundle_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_text(&bundle_path, &bundle.to_json()?)?;

    let mut text: String = provenance("fit", &cfg.echo())
        .iter()
        .map(|c| format!("# {c}\n"))
        .collect();
    text.push_str(&report.to_string());
    let report_path = out_path(cfg, "fit_report.txt");
    write_text(&report_path, &text)?;
    print!("{report}");
    info!("bundle written to {}", bundle_path.display());
    info!("report written to {}", report_path.display());
    Ok(())
}

fn histogram(causes: impl Iterator<Item = TerminationCause>) -> BTreeMap<&'static str, usize> {
    let mut h: BTreeMap<&'static str, usize> = [TerminationCause::Hazard, TerminationCause::Geographic, TerminationCause::MaxAge]
        .into_iter()
        .map(|c| (c.as_str(), 0))
        .collect();
    for c in causes {
        *h.entry(c.as_str()).or_default() += 1;
    }
    h
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.validate_simulation()?;
    let bundle_path = cfg.bundle_in()?;
    let text = fs::read_to_string(bundle_path).map_err(|source| CliError::Io {
        path: bundle_path.to_path_buf(),
        source,
    })?;
    let bundle = ModelBundle::from_json(&text)?;
    let sim = &cfg.simulation;
    let mut synthetic = simulate_catalog(&bundle, sim.storms, seed, sim.workers, &sim.options())?;
    if let Some(y) = sim.years {
        synthetic.years_of_record = y;
    }

    let hist = histogram(synthetic.storms.iter().map(|s| s.cause));
    let summary = format!(
        "simulated {} storms ({} years): {}",
        synthetic.storms.len(),
        synthetic.years_of_record,
        hist.iter()
            .map(|(k, v)| format!("{k} {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let mut comments = provenance("simulate", &cfg.echo());
    comments.push(format!("termination: {summary}"));

    ensure_dir(&cfg.paths.output_dir)?;
    let path = out_path(cfg, "synthetic.csv");
    let mut out = create(&path)?;
    write_synthetic(&mut out, &synthetic, &comments)?;
    out.flush().map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    println!("{summary}");
    info!("synthetic catalog written to {}", path.display());
    Ok(())
}

const REGION_COLS: [&str; 4] = ["lon_min", "lon_max", "lat_min", "lat_max"];

fn region_fields(r: &Region) -> [String; 4] {
    [r.lon_min, r.lon_max, r.lat_min, r.lat_max].map(|v| v.to_string())
}

fn result_fields(res: &Result<RiskResult, Error>) -> Result<[String; 6], CliError> {
    match res {
        Ok(r) => Ok([
            r.estimate.to_string(),
            num(r.ci.map(|c| c.0)),
            num(r.ci.map(|c| c.1)),
            r.numerator.to_string(),
            r.denominator.to_string(),
            r.status.as_str().to_string(),
        ]),
        Err(Error::UndefinedRegion(_)) => Ok([
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "0".into(),
            "0".into(),
            "undefined-region".into(),
        ]),
        Err(e) => Err(CliError::Validation(e.to_string())),
    }
}

const RESULT_COLS: [&str; 6] = ["estimate", "ci_lo", "ci_hi", "numerator", "denominator", "status"];

fn header<'a>(lead: &[&'a str]) -> Vec<&'a str> {
    let mut h = lead.to_vec();
    h.extend(RESULT_COLS);
    h
}

pub fn risk(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.catalog()?;
    cfg.validate_risk()?;
    let catalog = load(cfg, path)?;
    let rc = &cfg.risk;
    let boot = Some(&rc.bootstrap);
    let comments = provenance("risk", &cfg.echo());
    ensure_dir(&cfg.paths.output_dir)?;

    let mut lead = vec!["region"];
    lead.extend(REGION_COLS);
    let mut exceed_lead = lead.clone();
    exceed_lead.extend(["statistic", "omega"]);
    let mut period_lead = lead.clone();
    period_lead.push("omega");
    let mut level_lead = lead.clone();
    level_lead.push("r_years");

    let mut exceed = Table::create(out_path(cfg, "exceedance.csv"), &comments, &header(&exceed_lead))?;
    let mut period = Table::create(out_path(cfg, "return_period.csv"), &comments, &header(&period_lead))?;
    let mut level = Table::create(out_path(cfg, "return_level.csv"), &comments, &header(&level_lead))?;

    for (i, region) in rc.regions.iter().enumerate() {
        let rf = region_fields(region);
        let name = i.to_string();
        let mut undefined = false;
        let mut eval = |stat: Statistic| -> Result<[String; 6], CliError> {
            let res = estimate(&catalog, region, stat, boot);
            undefined |= matches!(res, Err(Error::UndefinedRegion(_)));
            result_fields(&res)
        };
        for &w in &rc.omegas {
            for (label, stat) in [
                ("exceedance", Statistic::Exceedance(w)),
                ("max-exceedance", Statistic::MaxExceedance(w)),
            ] {
                let f = eval(stat)?;
                let mut row = vec![name.clone()];
                row.extend(rf.iter().cloned());
                row.extend([label.to_string(), w.to_string()]);
                row.extend(f);
                exceed.row(&row)?;
            }
            let f = eval(Statistic::ReturnPeriod(w))?;
            let mut row = vec![name.clone()];
            row.extend(rf.iter().cloned());
            row.push(w.to_string());
            row.extend(f);
            period.row(&row)?;
        }
        for &r in &rc.return_periods {
            let f = eval(Statistic::ReturnLevel(r))?;
            let mut row = vec![name.clone()];
            row.extend(rf.iter().cloned());
            row.push(r.to_string());
            row.extend(f);
            level.row(&row)?;
        }
        if undefined {
            warn!("region {name} {region} contains no catalog point; rows written as NA");
        }
    }
    for t in [exceed, period, level] {
        info!("wrote {}", t.finish()?.display());
    }

    let grid = GridSpec::covering(&catalog, rc.map_cell_lon, rc.map_cell_lat, 1)?;
    let mut map_lead = vec!["ix", "iy"];
    map_lead.extend(REGION_COLS);
    map_lead.push("r_years");
    let mut map = Table::create(out_path(cfg, "return_level_map.csv"), &comments, &header(&map_lead))?;
    let map_boot = if rc.map_bootstrap { boot } else { None };
    for cell in grid.active_cells() {
        let lon_min = grid.lon0 + cell.ix as f64 * grid.dlon;
        let lat_min = grid.lat0 + cell.iy as f64 * grid.dlat;
        let region = Region::new(lon_min, lon_min + grid.dlon, lat_min, lat_min + grid.dlat)?;
        for &r in &rc.return_periods {
            let f = result_fields(&estimate(&catalog, &region, Statistic::ReturnLevel(r), map_boot))?;
            let mut row = vec![cell.ix.to_string(), cell.iy.to_string()];
            row.extend(region_fields(&region));
            row.push(r.to_string());
            row.extend(f);
            map.row(&row)?;
        }
    }
    info!("wrote {}", map.finish()?.display());
    Ok(())
}

/// Bearing series unwrapped so that consecutive values differ by less than π.
fn unwrapped(s: &StormTrack) -> Vec<f64> {
    let b = s.bearing();
    let mut out = Vec::with_capacity(b.len());
    if let Some(&first) = b.first() {
        out.push(first);
        for w in b.windows(2) {
            let prev = *out.last().expect("non-empty");
            out.push(prev + wrap_angle(w[1] - w[0]));
        }
    }
    out
}

type Extract = fn(&StormTrack) -> Vec<f64>;

const VARIABLES: [(&str, Extract); 3] = [
    ("speed", |s| s.speed().to_vec()),
    ("direction", |s| s.bearing().to_vec()),
    ("vorticity", |s| s.vorticity().collect()),
];

fn per_storm(c: &Catalog, f: Extract) -> Vec<Vec<f64>> {
    c.storms.iter().map(f).collect()
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.catalog()?;
    let dc = &cfg.diagnose;
    if dc.quantiles == 0 || dc.max_lag == 0 {
        return Err(CliError::Validation("quantiles and max_lag must be positive".into()));
    }
    if !(dc.density_cell_lon > 0.0 && dc.density_cell_lat > 0.0) {
        return Err(CliError::Validation("density cell size must be positive".into()));
    }
    let observed = load(cfg, path)?;
    let synthetic = match &cfg.paths.synthetic {
        Some(p) if !p.is_file() => {
            return Err(CliError::Validation(format!("synthetic catalog {} does not exist", p.display())))
        }
        Some(p) => Some(load_catalog(p, None)?.0),
        None => None,
    };
    let bundle = match cfg.paths.bundle.as_deref() {
        Some(_) => {
            let p = cfg.bundle_in()?;
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            Some(ModelBundle::from_json(&text)?)
        }
        None => None,
    };
    let comments = provenance("diagnose", &cfg.echo());
    ensure_dir(&cfg.paths.output_dir)?;
    let mut sources = vec![("observed", &observed)];
    if let Some(s) = &synthetic {
        sources.push(("synthetic", s));
    }

    let mut pacf = Table::create(out_path(cfg, "pacf.csv"), &comments, &["source", "variable", "lag", "pacf"])?;
    for (source, cat) in &sources {
        let series: [(&str, Vec<Vec<f64>>); 3] = [
            ("speed", per_storm(cat, |s| s.speed().to_vec())),
            ("direction", per_storm(cat, unwrapped)),
            ("vorticity", per_storm(cat, |s| s.vorticity().collect())),
        ];
        for (name, data) in series {
            let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
            match pooled_pacf(&refs, dc.max_lag) {
                Ok(values) => {
                    for (lag, v) in values.iter().enumerate() {
                        pacf.row([source.to_string(), name.to_string(), (lag + 1).to_string(), v.to_string()])?;
                    }
                }
                Err(e) => warn!("pacf of {source} {name}: {e}"),
            }
        }
    }
    info!("wrote {}", pacf.finish()?.display());

    let mut all = observed.storms.clone();
    if let Some(s) = &synthetic {
        all.extend(s.storms.iter().cloned());
    }
    let grid = GridSpec::covering(
        &Catalog::new(all, observed.years_of_record)?,
        dc.density_cell_lon,
        dc.density_cell_lat,
        1,
    )?;
    let mut density = Table::create(
        out_path(cfg, "density.csv"),
        &comments,
        &["source", "subset", "ix", "iy", "lon_min", "lon_max", "lat_min", "lat_max", "density"],
    )?;
    for (source, cat) in &sources {
        for (label, subset) in [("all", Subset::All), ("genesis", Subset::Genesis), ("lysis", Subset::Lysis)] {
            let d = spatial_density(&cat.storms, &grid, subset, false)?;
            for (i, v) in d.iter().enumerate() {
                let c = grid.unflat(i);
                let lon = grid.lon0 + c.ix as f64 * grid.dlon;
                let lat = grid.lat0 + c.iy as f64 * grid.dlat;
                density.row([
                    source.to_string(),
                    label.to_string(),
                    c.ix.to_string(),
                    c.iy.to_string(),
                    lon.to_string(),
                    (lon + grid.dlon).to_string(),
                    lat.to_string(),
                    (lat + grid.dlat).to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    info!("wrote {}", density.finish()?.display());

    let (scale, values): (&str, Vec<f64>) = match &bundle {
        Some(b) => (
            "residual",
            residual_series(&observed, &b.preproc, &b.config.window)
                .into_iter()
                .flatten()
                .flatten()
                .collect(),
        ),
        None => ("vorticity", observed.points().map(|p| p.vorticity).collect()),
    };
    let mut mrl = Table::create(
        out_path(cfg, "mrl.csv"),
        &comments,
        &["scale", "threshold", "mean_excess", "ci_lo", "ci_hi", "n_exceed"],
    )?;
    for r in mean_residual_life(&values, &mrl_thresholds(&values))? {
        mrl.row([
            scale.to_string(),
            r.threshold.to_string(),
            r.mean_excess.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.n_exceed.to_string(),
        ])?;
    }
    info!("wrote {}", mrl.finish()?.display());

    let Some(sim) = &synthetic else {
        info!("no synthetic catalog given; QQ tables skipped");
        return Ok(());
    };
    let probs: Vec<f64> = (1..=dc.quantiles).map(|i| i as f64 / (dc.quantiles + 1) as f64).collect();
    let mut qq = Table::create(
        out_path(cfg, "qq.csv"),
        &comments,
        &["variable", "prob", "observed", "simulated", "lo", "hi", "inside"],
    )?;
    let mut write = |name: &str, rows: &[QqRow]| -> Result<(), CliError> {
        println!("{name}: {:.3} of QQ points inside the envelope", fraction_inside(rows));
        for r in rows {
            qq.row([
                name.to_string(),
                r.prob.to_string(),
                r.observed.to_string(),
                r.simulated.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
                r.inside.to_string(),
            ])?;
        }
        Ok(())
    };
    for (name, f) in VARIABLES {
        let rows = qq_envelope_grouped(&per_storm(&observed, f), &per_storm(sim, f), &probs, &dc.envelope)?;
        write(name, &rows)?;
    }
    let life = |c: &Catalog| c.storms.iter().map(|s| s.len() as f64).collect::<Vec<_>>();
    let rows = qq_envelope(&life(&observed), &life(sim), &probs, &dc.envelope)?;
    write("lifetime", &rows)?;
    info!("wrote {}", qq.finish()?.display());
    Ok(())
}
