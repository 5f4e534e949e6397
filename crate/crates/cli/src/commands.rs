use std::path::{Path, PathBuf};

use rnoise::checkpoint::{Checkpoint, Provenance};
use rnoise::data::{make_dataset, Dataset, DatasetSpec};
use rnoise::infodiag::mi_gain;
use rnoise::metrics::{energy_distance, sliced_w2, MetricResult};
use rnoise::model::{added_param_ratio, NoiseFamily, NoiseGenerator};
use rnoise::numerics::{Rng, Tensor};
use rnoise::sampling::{generate, noise_ledger, Diffusion, SamplerConfig, SamplerKind, ScheduleKind};
use rnoise::training::{train_loop, TrainInit, TrainLog, TrainMode};

use crate::config::{load_dataset, load_points, parse_spec_string, RunConfig, FINETUNE_DEFAULT_STEPS};
use crate::csvio;
use crate::error::{CliError, CliResult};
use crate::svg;

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::missing(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path).map_err(|e| CliError::missing(format!("checkpoint {}: {e}", path.display())))
}

/// Overrides shared by `train` and `finetune`.
#[derive(Debug, Default, Clone)]
pub struct TrainOverrides {
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: Option<String>,
    pub family: Option<NoiseFamily>,
    pub extra_blocks: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(f) = self.family {
            cfg.train.noise_family = f;
        }
        if let Some(k) = self.extra_blocks {
            cfg.train.extra_blocks = k;
        }
    }
}

/// Training data plus the held-out reference (only for generated data).
fn resolve_data(data: Option<&str>, cfg: &mut RunConfig) -> CliResult<(Dataset, Option<Tensor>)> {
    let is_file = data.is_some_and(|d| d.ends_with(".csv"));
    if let Some(d) = data.filter(|_| !is_file) {
        cfg.dataset = if d.ends_with(".json") {
            load_dataset(d, &cfg.dataset)?.spec
        } else {
            parse_spec_string(d, &cfg.dataset)?
        };
    }
    let dataset = match data.filter(|_| is_file) {
        Some(path) => load_dataset(path, &cfg.dataset)?,
        None => make_dataset(&cfg.dataset)?,
    };
    let held = if is_file {
        None
    } else {
        Some(make_dataset(&cfg.held_out_spec())?.points)
    };
    Ok((dataset, held))
}

fn class_count(dataset: &Dataset) -> CliResult<usize> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| CliError::contract("a conditional model needs labeled data"))?;
    Ok(labels.iter().max().map_or(0, |m| m + 1))
}

fn write_run(
    cfg: &RunConfig,
    mut ckpt: Checkpoint,
    mut log: TrainLog,
    parent: Option<String>,
) -> CliResult<PathBuf> {
    let mut identity = cfg.clone();
    identity.output_dir = PathBuf::new();
    ckpt.provenance = Provenance::from_identity(&identity.to_json(), parent);
    if let Some(gen) = &ckpt.noise_generator {
        let r = added_param_ratio(&ckpt.model, gen);
        log.header = vec![
            ("noise_family".into(), gen.family.name().into()),
            ("extra_blocks".into(), gen.blocks.len().to_string()),
            ("backbone_params".into(), r.backbone.to_string()),
            ("added_params".into(), r.added.to_string()),
            ("added_param_ratio".into(), r.ratio.to_string()),
        ];
    }
    let dir = cfg
        .output_dir
        .join(format!("{}-{}", ckpt.mode.name(), ckpt.provenance.run_id));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::missing(format!("cannot create {}: {e}", dir.display())))?;
    ckpt.save(&dir.join("checkpoint.json"))?;
    std::fs::write(dir.join("log.csv"), log.to_csv())?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    println!("run_dir: {}", dir.display());
    println!("checkpoint: {}", dir.join("checkpoint.json").display());
    println!("log: {}", dir.join("log.csv").display());
    if let Some(v) = log.final_eval() {
        println!("final_eval_sliced_w2: {v}");
    }
    Ok(dir)
}

pub fn train(
    config: Option<&Path>,
    mode: Option<TrainMode>,
    conditional: bool,
    resume: Option<&Path>,
    ov: &TrainOverrides,
) -> CliResult<()> {
    let (mut cfg, _) = RunConfig::load(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.conditional |= conditional;
    ov.apply(&mut cfg);
    if cfg.mode == TrainMode::Finetune {
        return Err(CliError::config("mode finetune is run by the `finetune` command"));
    }
    cfg.train.validate()?;
    let (dataset, held) = resolve_data(ov.data.as_deref(), &mut cfg)?;
    let (init, parent) = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let parent = ck.provenance.parent_run_id.clone();
            (TrainInit::Resume(Box::new(ck)), parent)
        }
        None => {
            let classes = if cfg.conditional { class_count(&dataset)? } else { 0 };
            (
                TrainInit::Fresh {
                    model: cfg.model.clone(),
                    class_count: classes,
                },
                None,
            )
        }
    };
    let (ckpt, log) = train_loop(cfg.mode, &cfg.train, &dataset, init, held.as_ref())?;
    write_run(&cfg, ckpt, log, parent)?;
    Ok(())
}

pub fn finetune(
    config: Option<&Path>,
    from: Option<&Path>,
    resume: Option<&Path>,
    ov: &TrainOverrides,
) -> CliResult<()> {
    let (mut cfg, has_steps) = RunConfig::load(config)?;
    cfg.mode = TrainMode::Finetune;
    if !has_steps {
        cfg.train.steps = FINETUNE_DEFAULT_STEPS;
    }
    ov.apply(&mut cfg);
    cfg.train.validate()?;
    let (dataset, held) = resolve_data(ov.data.as_deref(), &mut cfg)?;
    let (init, parent) = match (resume, from) {
        (Some(p), _) => {
            let ck = load_checkpoint(p)?;
            let parent = ck.provenance.parent_run_id.clone();
            (TrainInit::Resume(Box::new(ck)), parent)
        }
        (None, Some(p)) => {
            let ck = load_checkpoint(p)?;
            let parent = Some(ck.provenance.run_id.clone());
            (TrainInit::Pretrained(Box::new(ck)), parent)
        }
        (None, None) => {
            return Err(CliError::missing("finetune needs --from <rf checkpoint> or --resume"));
        }
    };
    let (ckpt, log) = train_loop(TrainMode::Finetune, &cfg.train, &dataset, init, held.as_ref())?;
    write_run(&cfg, ckpt, log, parent)?;
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct SamplerOverrides {
    pub kind: Option<SamplerKind>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub cfg: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub diffusion_c: Option<f64>,
}

impl SamplerOverrides {
    pub fn resolve(&self, config: Option<&Path>) -> CliResult<SamplerConfig> {
        let mut s = RunConfig::load(config)?.0.sampler;
        if let Some(k) = self.kind {
            s.kind = k;
        }
        if let Some(n) = self.steps {
            s.steps = n;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if self.cfg.is_some() {
            s.cfg_scale = self.cfg;
        }
        let Diffusion { schedule, c } = s.diffusion;
        s.diffusion = Diffusion {
            schedule: self.schedule.unwrap_or(schedule),
            c: self.diffusion_c.unwrap_or(c),
        };
        s.validate()?;
        Ok(s)
    }
}

pub struct SampleArgs<'a> {
    pub from: &'a Path,
    pub n: usize,
    pub label: Option<usize>,
    pub out: &'a Path,
    pub trajectories: Option<&'a Path>,
    pub ledger: bool,
}

fn generator_for<'c>(ckpt: &'c Checkpoint, kind: SamplerKind) -> CliResult<Option<&'c NoiseGenerator>> {
    if !kind.is_delta_rn() {
        return Ok(None);
    }
    match &ckpt.noise_generator {
        Some(g) => Ok(Some(g)),
        None => Err(CliError::contract(format!(
            "sampler kind {} needs a noise generator, but {} is a {} checkpoint without one; \
             fine-tune it first or use a plain kind",
            kind.name(),
            ckpt.provenance.run_id,
            ckpt.mode.name()
        ))),
    }
}

pub fn sample(args: &SampleArgs<'_>, sampler: &SamplerConfig) -> CliResult<()> {
    let ckpt = load_checkpoint(args.from)?;
    let model = &ckpt.model;
    if sampler.cfg_scale.is_some() && !model.is_conditional() {
        return Err(CliError::contract("--cfg needs a class-conditional checkpoint"));
    }
    let labels: Option<Vec<usize>> = match args.label {
        Some(l) if !model.is_conditional() => {
            return Err(CliError::contract(format!("--label {l} given for an unconditional checkpoint")))
        }
        Some(l) if l >= model.class_count => {
            return Err(CliError::contract(format!(
                "label {l} outside [0, {})",
                model.class_count
            )))
        }
        Some(l) => Some(vec![l; args.n]),
        None if sampler.cfg_scale.is_some() => Some((0..args.n).map(|i| i % model.class_count).collect()),
        None => None,
    };
    if args.ledger && !sampler.kind.is_delta_rn() {
        return Err(CliError::contract("--ledger needs a delta_rn sampler kind"));
    }
    let gen = generator_for(&ckpt, sampler.kind)?;
    let traj_path = match (args.trajectories, args.ledger) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, true) => Some(args.out.with_file_name("trajectories.csv")),
        (None, false) => None,
    };
    let (samples, traj) = generate(model, gen, sampler, args.n, labels.as_deref(), traj_path.is_some())?;
    csvio::write_samples(args.out, &samples, labels.as_deref())?;
    println!("samples: {}", args.out.display());
    if let (Some(path), Some(traj)) = (traj_path, traj) {
        csvio::write_trajectories(&path, &traj, args.ledger)?;
        println!("trajectories: {}", path.display());
        if args.ledger {
            let (_, cum) = noise_ledger(&traj)?;
            if let Some(last) = cum.last() {
                let mut total = 0.0;
                for i in 0..last.rows() {
                    total += last.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                }
                println!("mean_cumulative_noise_norm: {}", total / last.rows() as f64);
            }
        }
    }
    Ok(())
}

pub struct MetricArgs {
    pub projections: usize,
    pub metric_seed: u64,
}

fn metric_pair(a: &Tensor, b: &Tensor, m: &MetricArgs) -> CliResult<Vec<MetricResult>> {
    if a.cols() != b.cols() {
        return Err(CliError::contract(format!(
            "dimension mismatch: generated points are {}-D, reference points {}-D",
            a.cols(),
            b.cols()
        )));
    }
    Ok(vec![
        sliced_w2(a, b, m.projections, m.metric_seed)?,
        energy_distance(a, b)?,
    ])
}

pub fn eval(gen: &Path, reference: &str, out: Option<&Path>, m: &MetricArgs) -> CliResult<()> {
    let (a, _) = csvio::read_points(gen)?;
    let b = load_points(reference, &DatasetSpec::default())?;
    if a.rows() == 0 || b.rows() == 0 {
        return Err(CliError::config("evaluation needs non-empty point sets"));
    }
    let rows = metric_pair(&a, &b, m)?;
    println!("{}", MetricResult::CSV_HEADER);
    for r in &rows {
        println!("{}", r.csv_row());
    }
    if let Some(path) = out {
        csvio::append_metrics(path, &rows)?;
    }
    Ok(())
}

pub const COMPARE_HEADER: &str = "sampler,metric,value,n_a,n_b,seed";
pub const COMPARE_KINDS: [SamplerKind; 3] = [SamplerKind::Ode, SamplerKind::Sde, SamplerKind::DeltaRnSde];

pub fn compare(
    from: &Path,
    reference: &str,
    n: usize,
    sampler: &SamplerConfig,
    out: Option<&Path>,
    m: &MetricArgs,
) -> CliResult<()> {
    let ckpt = load_checkpoint(from)?;
    let b = load_points(reference, &DatasetSpec::default())?;
    let mut table = format!("{COMPARE_HEADER}\n");
    for kind in COMPARE_KINDS {
        let cfg = SamplerConfig { kind, cfg_scale: None, ..sampler.clone() };
        let gen = generator_for(&ckpt, kind)?;
        let (a, _) = generate(&ckpt.model, gen, &cfg, n, None, false)?;
        for r in metric_pair(&a, &b, m)? {
            table.push_str(&format!("{},{}\n", kind.name(), r.csv_row()));
        }
    }
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, &table)?;
    }
    Ok(())
}

pub fn entropy(from: &Path, data: &str, n: usize, m: usize, seed: u64, per_dim: bool) -> CliResult<()> {
    let ckpt = load_checkpoint(from)?;
    let dataset = load_dataset(data, &DatasetSpec::default())?;
    let degenerate;
    let gen = match &ckpt.noise_generator {
        Some(g) => g,
        None => {
            degenerate = NoiseGenerator::for_model(&ckpt.model, NoiseFamily::Gaussian, 0, &mut Rng::new(seed));
            &degenerate
        }
    };
    let report = mi_gain(&ckpt.model, gen, &dataset, n, m, per_dim, &mut Rng::new(seed))?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

pub fn plot(samples: &Path, reference: Option<&Path>, ledger: Option<&Path>, out: &Path) -> CliResult<()> {
    if let Some(l) = ledger {
        let series = csvio::read_ledger(l)?;
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        let path = out.with_file_name(format!("{stem}-ledger.svg"));
        std::fs::write(&path, svg::ledger_chart(&series))?;
        println!("ledger_plot: {}", path.display());
    }
    let (gen, _) = csvio::read_points(samples)?;
    let refs = match reference {
        Some(p) => Some(csvio::read_points(p)?.0),
        None => None,
    };
    if gen.cols() != 2 || refs.as_ref().is_some_and(|r| r.cols() != 2) {
        return Err(CliError::contract("scatter plots need two-dimensional points"));
    }
    std::fs::write(out, svg::scatter(&gen, refs.as_ref()))?;
    println!("plot: {}", out.display());
    Ok(())
}
