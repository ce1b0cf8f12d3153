use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pptv::attribution::{
    aggregate_channels, attention_indicator, gradcam_saliency, parse_saliency_csv, perturbation_saliency, pptv,
    saliency_csv, threshold_mask, vbp_saliency, write_pgm, ChannelMode, Method, SaliencyMap, SaliencyTable, Scope,
};
use pptv::data::{load_dataset, mask_to_csv, save_dataset, synth_generate, GridSpec, CHANNEL_NAMES};
use pptv::experiments::{
    config_hash, report_stem, retrain_validate, seasonal_group, skill_table_csv, train as train_model, Report,
    SkillReport, SkillRow, NON_SPRING_MONTHS, SPRING_MONTHS,
};
use pptv::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use pptv::{Error, Result};

use crate::config::RunConfig;

/// Exit status for an error: 2 configuration or usage, 3 I/O or file
/// format, 4 numeric failure, 5 empty result.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig { .. } | Error::InvalidArgument(_) | Error::Shape(_) | Error::Missing(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        Error::NonFiniteGradient { .. } | Error::Divergence { .. } => 4,
        Error::Empty(_) => 5,
    }
}

pub fn need(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("{name} is required (flag or [paths] entry)")))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn gen_data(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let (ds, truth) = synth_generate(seed, &cfg.synth)?;
    save_dataset(out, &ds)?;
    write(&with_suffix(out, ".truth.csv"), mask_to_csv(&ds.grid, &truth.driver_mask))?;
    println!(
        "generated n_samples={} grid={}x{} noise={} driver_cells={}",
        ds.len(),
        ds.grid.nlat,
        ds.grid.nlon,
        cfg.synth.noise_level,
        truth.driver_mask.count()
    );
    Ok(())
}

fn model_config(cfg: &RunConfig, grid: &GridSpec, lead: Option<u32>, seed: u64) -> Result<ModelConfig> {
    let config = ModelConfig {
        grid: grid.extents(),
        lead_months: lead.unwrap_or(cfg.model.lead_months),
        seed,
        ..cfg.model.clone()
    };
    config.validate()?;
    Ok(config)
}

fn skill_rows(lead: u32, skill: &SkillReport) -> Vec<SkillRow> {
    let mut rows = vec![SkillRow {
        lead,
        month: None,
        r: skill.overall,
        attention: None,
    }];
    rows.extend(skill.per_month.iter().map(|&(m, r)| SkillRow {
        lead,
        month: Some(m),
        r,
        attention: None,
    }));
    rows
}

fn run_hash(cfg: &RunConfig, model: &ModelConfig) -> String {
    let mut entries = cfg.entries();
    entries.extend(model.to_key_values().into_iter().map(|(k, v)| (format!("run.{k}"), v)));
    config_hash(&entries)
}

pub fn train(cfg: &RunConfig, data: &Path, lead: Option<u32>, seed: u64, out_model: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let config = model_config(cfg, &ds.grid, lead, seed)?;
    let spec = pptv::experiments::TrainSpec {
        seed,
        ..cfg.train.clone()
    };
    let mut model = Model::build(config.clone())?;
    let report = train_model(&mut model, &ds, &spec)?;
    save_checkpoint(out_model, &model)?;

    let stem = format!("{}{}", cfg.report_prefix, report_stem("train", &run_hash(cfg, &config), seed));
    let mut text = Report::new();
    text.section(
        "run",
        vec![
            ("command".into(), "train".into()),
            ("seed".into(), seed.to_string()),
            ("data".into(), data.display().to_string()),
            ("checkpoint".into(), out_model.display().to_string()),
        ],
    )
    .section("model", config.to_key_values())
    .section("train", spec.to_key_values())
    .section(
        "result",
        vec![
            ("validation_r".into(), format!("{:.16e}", report.skill.overall)),
            ("n_validation".into(), report.skill.n_validation.to_string()),
            ("best_epoch".into(), report.best_epoch.to_string()),
            ("epochs_run".into(), report.train_loss.len().to_string()),
            (
                "final_train_loss".into(),
                report.train_loss.last().map_or(String::new(), |l| format!("{l:.16e}")),
            ),
        ],
    );
    write(&sibling(out_model, &format!("{stem}.txt")), text.to_text())?;
    write(&sibling(out_model, &format!("{stem}.cfg")), cfg.to_text())?;
    write(
        &sibling(out_model, &format!("{stem}.csv")),
        skill_table_csv(&skill_rows(config.lead_months, &report.skill)),
    )?;
    println!("validation r = {:.4}", report.skill.overall);
    Ok(())
}

fn saliency(cfg: &RunConfig, model: &Model, inputs: &[&pptv::Tensor]) -> Result<SaliencyMap> {
    match cfg.attribution.method {
        Method::Pptv => pptv(model, inputs),
        Method::Vbp => vbp_saliency(model, inputs),
        Method::Perturbation => perturbation_saliency(model, inputs, &cfg.attribution.perturbation),
        Method::GradCam => gradcam_saliency(model, inputs),
    }
}

pub fn explain(cfg: &RunConfig, model_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(model_path)?;
    let ds = load_dataset(data)?;
    let map = saliency(cfg, &model, &ds.inputs())?;
    if map.is_zero() {
        eprintln!("warning: the saliency map is identically zero (constant model?)");
    }
    let planes = aggregate_channels(&map, cfg.attribution.channels)?;
    let labels: Vec<&str> = match cfg.attribution.channels {
        ChannelMode::Mean => vec!["mean"],
        ChannelMode::PerChannel => CHANNEL_NAMES.to_vec(),
    };
    let tables = planes
        .iter()
        .zip(&labels)
        .map(|(p, l)| SaliencyTable::from_map(p, &[l]))
        .collect::<Result<Vec<_>>>()?;
    write(&with_suffix(out, ".csv"), saliency_csv(&ds.grid, &SaliencyTable::concat(tables)?)?)?;
    for (plane, label) in planes.iter().zip(&labels) {
        let path = match cfg.attribution.channels {
            ChannelMode::Mean => with_suffix(out, ".pgm"),
            ChannelMode::PerChannel => with_suffix(out, &format!("_{label}.pgm")),
        };
        write(&path, write_pgm(&plane.normalized)?)?;
        let a = attention_indicator(&plane.normalized, Scope::default())?;
        println!("attention_indicator[{label}] = {:.6}", a.value);
    }
    Ok(())
}

pub fn validate(
    cfg: &RunConfig,
    data: &Path,
    saliency_path: &Path,
    tau: f64,
    lead: Option<u32>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let (grid, table) = parse_saliency_csv(&read(saliency_path)?)?;
    if grid.extents() != ds.grid.extents() {
        return Err(Error::Shape(format!(
            "saliency grid {:?} does not match dataset grid {:?}",
            grid.extents(),
            ds.grid.extents()
        )));
    }
    let mean = table.mean_map(Method::Pptv)?;
    let mask = threshold_mask(&mean.normalized, tau)?;
    if mask.is_empty() {
        return Err(Error::Empty(format!(
            "no cell reaches threshold {tau}; try a lower --threshold"
        )));
    }
    let config = model_config(cfg, &ds.grid, lead, seed)?;
    let spec = pptv::experiments::TrainSpec {
        seed,
        ..cfg.train.clone()
    };
    let result = retrain_validate(&config, &ds, &mask, &spec)?;

    let mut csv = String::from("run,month,r\n");
    for (name, skill) in [("full", &result.full), ("masked", &result.masked)] {
        csv.push_str(&format!("{name},all,{:.16e}\n", skill.overall));
        for (m, r) in &skill.per_month {
            csv.push_str(&format!("{name},{m},{r:.16e}\n"));
        }
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = report_stem("validate", &run_hash(cfg, &config), seed);
        sibling(saliency_path, &format!("{}{stem}.csv", cfg.report_prefix))
    });
    write(&out, csv)?;
    println!(
        "mask_cells={} full_r={:.4} masked_r={:.4} delta={:.4}",
        mask.count(),
        result.full.overall,
        result.masked.overall,
        result.skill_drop
    );
    Ok(())
}

fn load_mean(path: &Path) -> Result<(GridSpec, SaliencyMap)> {
    if !path.exists() {
        return Err(Error::Missing(format!("saliency file {}", path.display())));
    }
    let (grid, table) = parse_saliency_csv(&read(path)?)?;
    Ok((grid, table.mean_map(Method::Pptv)?))
}

fn mean_csv(grid: &GridSpec, map: &SaliencyMap) -> Result<String> {
    saliency_csv(grid, &SaliencyTable::from_map(map, &["mean"])?)
}

pub fn analyze(dir: &Path, mode: &str, out: &Path) -> Result<()> {
    match mode {
        "seasonal" => {
            let mut maps = BTreeMap::new();
            let mut grid = None;
            for m in SPRING_MONTHS.iter().chain(&NON_SPRING_MONTHS) {
                let (g, map) = load_mean(&dir.join(format!("month_{m:02}.csv")))?;
                grid = Some(g);
                maps.insert(*m, map);
            }
            let grid = grid.expect("eight months");
            let pair = seasonal_group(&maps)?;
            let mut table = String::from("group,attention_indicator\n");
            for (name, map) in [("spring", &pair.spring), ("non_spring", &pair.non_spring)] {
                write(&out.join(format!("seasonal_{name}.csv")), mean_csv(&grid, map)?)?;
                let a = attention_indicator(&map.normalized, Scope { season: Some(name.into()), ..Scope::default() })?;
                table.push_str(&format!("{name},{:.16e}\n", a.value));
                println!("attention_indicator[{name}] = {:.6}", a.value);
            }
            write(&out.join("seasonal_attention.csv"), table)
        }
        "lead-sweep" => {
            let mut leads = Vec::new();
            for entry in fs::read_dir(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })? {
                let name = entry.map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?.file_name();
                let name = name.to_string_lossy();
                if let Some(l) = name.strip_prefix("lead_").and_then(|n| n.strip_suffix(".csv")) {
                    if let Ok(l) = l.parse::<u32>() {
                        leads.push(l);
                    }
                }
            }
            let max = leads.iter().copied().max().ok_or_else(|| Error::Missing(format!("lead_NN.csv files in {}", dir.display())))?;
            let mut table = String::from("lead,attention_indicator\n");
            for lead in 1..=max {
                let (_, map) = load_mean(&dir.join(format!("lead_{lead:02}.csv")))?;
                let a = attention_indicator(&map.normalized, Scope { lead: Some(lead), ..Scope::default() })?;
                table.push_str(&format!("{lead},{:.16e}\n", a.value));
            }
            println!("lead sweep over {max} leads");
            write(&out.join("lead_sweep.csv"), table)
        }
        "zonal" | "meridional" => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .filter(|p| read(p).is_ok_and(|t| t.starts_with("channel,lat,lon,raw,normalized")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Missing(format!("saliency CSV files in {}", dir.display())));
            }
            let mut columns = Vec::new();
            let mut axis: Option<Vec<f64>> = None;
            for f in &files {
                let (grid, map) = load_mean(f)?;
                let (values, coords): (Vec<f64>, Vec<f64>) = if mode == "zonal" {
                    (pptv::attribution::zonal_mean(&map.normalized)?, (0..grid.nlat).map(|i| grid.lat(i)).collect())
                } else {
                    (pptv::attribution::meridional_mean(&map.normalized)?, (0..grid.nlon).map(|j| grid.lon(j)).collect())
                };
                match &axis {
                    Some(a) if *a != coords => {
                        return Err(Error::Shape(format!("{} uses a different grid", f.display())))
                    }
                    _ => axis = Some(coords),
                }
                let name = f.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
                columns.push((name, values));
            }
            let axis = axis.expect("at least one file");
            let coord = if mode == "zonal" { "lat" } else { "lon" };
            let mut table = coord.to_string();
            for (name, _) in &columns {
                table.push(',');
                table.push_str(name);
            }
            table.push('\n');
            for (k, c) in axis.iter().enumerate() {
                table.push_str(&c.to_string());
                for (_, v) in &columns {
                    table.push_str(&format!(",{:.16e}", v[k]));
                }
                table.push('\n');
            }
            println!("{mode} means for {} map(s)", columns.len());
            write(&out.join(format!("{mode}.csv")), table)
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown mode {other:?} (seasonal | lead-sweep | zonal | meridional)"
        ))),
    }
}
