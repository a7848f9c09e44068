use std::path::{Path, PathBuf};

use lowshot::benchmark::{emit_csv, extract_features, hallucinator_seed, run_benchmark, ReportFormat, BenchmarkReport};
use lowshot::classifier::LinearClassifier;
use lowshot::dataset::{load_feature_store, make_synthetic, save_feature_store, ClassSplit, ExampleSource};
use lowshot::hallucinator::{build_hallucinator, save_quadruplets};
use lowshot::mlp::Mlp;
use lowshot::repr::{train_representation, RegularizerKind, EXTRACTOR_MAGIC};
use lowshot::theory::run_theory_suite;
use serde_json::json;

use crate::config::RunConfigFile;
use crate::manifest::{Stage, Status};
use crate::Failure;

pub struct Ctx {
    pub config: RunConfigFile,
    pub out: PathBuf,
    pub force: bool,
}

impl Ctx {
    fn data_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.config.paths.data.clone())
            .unwrap_or_else(|| self.out.join("world"))
    }

    fn prepare(&self, stage: &Stage) -> Result<bool, Failure> {
        match stage.check(self.force)? {
            Status::UpToDate => {
                println!("{}: up to date in {}", stage.command, stage.dir.display());
                Ok(false)
            }
            Status::Run => {
                std::fs::create_dir_all(&stage.dir)
                    .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", stage.dir.display())))?;
                Ok(true)
            }
        }
    }

    fn done(&self, stage: &Stage) -> Result<(), Failure> {
        let m = stage.finish()?;
        println!("{}: wrote {} (config {})", stage.command, stage.dir.display(), &m.config_hash[..16]);
        Ok(())
    }
}

fn require(path: &Path, hint: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("missing input {}; {hint}", path.display())))
    }
}

pub fn synth(ctx: &Ctx) -> Result<(), Failure> {
    let c = &ctx.config;
    let parts = json!({ "synthetic": c.synthetic, "seed": c.benchmark.master_seed });
    let stage = Stage::new(ctx.out.join("world"), "synth", &parts, &[], &["train.lsf", "test.lsf", "split.json"])?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let world = make_synthetic(&c.synthetic, c.benchmark.master_seed)?;
    save_feature_store(&world.train, &stage.path("train.lsf"))?;
    save_feature_store(&world.test, &stage.path("test.lsf"))?;
    world.split.save(&stage.path("split.json"))?;
    ctx.done(&stage)
}

pub fn train_repr(
    ctx: &Ctx,
    data: Option<&Path>,
    regularizer: Option<RegularizerKind>,
    lambda: Option<f64>,
) -> Result<(), Failure> {
    let dir = ctx.data_dir(data);
    let (train_p, split_p) = (dir.join("train.lsf"), dir.join("split.json"));
    require(&train_p, "run `synth` first or set --data")?;
    require(&split_p, "run `synth` first or set --data")?;
    let mut repr = ctx.config.benchmark.representation.clone();
    if let Some(r) = regularizer {
        repr.regularizer = r;
    }
    if let Some(l) = lambda {
        repr.lambda = l;
    }
    repr.validate().map_err(|e| Failure::Config(format!("at `benchmark.representation`: {e}")))?;
    let arch = &ctx.config.benchmark.architecture;
    let parts = json!({ "representation": repr, "architecture": arch });
    let stage = Stage::new(
        ctx.out.join("repr"),
        "train-repr",
        &parts,
        &[("train.lsf", &train_p), ("split.json", &split_p)],
        &["extractor.lse", "head.lsw", "loss_trace.json"],
    )?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let train = load_feature_store(&train_p)?;
    let split = ClassSplit::load(&split_p)?;
    split.validate(train.class_count())?;
    let r = train_representation(&train, &split.base, arch, &repr)?;
    r.extractor.save(&stage.path("extractor.lse"), EXTRACTOR_MAGIC)?;
    r.classifier.save(&stage.path("head.lsw"))?;
    lowshot::write_json(&stage.path("loss_trace.json"), &r.loss_trace)?;
    println!(
        "train-repr: {} epochs, loss {:.4} → {:.4}",
        r.loss_trace.len(),
        r.loss_trace.first().copied().unwrap_or(f64::NAN),
        r.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    ctx.done(&stage)
}

pub fn extract(ctx: &Ctx, data: Option<&Path>, extractor: Option<&Path>) -> Result<(), Failure> {
    let dir = ctx.data_dir(data);
    let ext_p = extractor.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("repr/extractor.lse"));
    let (train_p, test_p) = (dir.join("train.lsf"), dir.join("test.lsf"));
    require(&ext_p, "run `train-repr` first or pass --extractor")?;
    require(&train_p, "run `synth` first or set --data")?;
    require(&test_p, "run `synth` first or set --data")?;
    let stage = Stage::new(
        ctx.out.join("features"),
        "extract",
        &json!({}),
        &[("extractor.lse", &ext_p), ("train.lsf", &train_p), ("test.lsf", &test_p)],
        &["train.lsf", "test.lsf"],
    )?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let net = Mlp::load(&ext_p, EXTRACTOR_MAGIC)?;
    for (src, name) in [(&train_p, "train.lsf"), (&test_p, "test.lsf")] {
        let feats = extract_features(&net, &load_feature_store(src)?)?;
        save_feature_store(&feats, &stage.path(name))?;
    }
    ctx.done(&stage)
}

pub fn hallucinate_prep(
    ctx: &Ctx,
    data: Option<&Path>,
    features: Option<&Path>,
    head: Option<&Path>,
) -> Result<(), Failure> {
    let split_p = ctx.data_dir(data).join("split.json");
    let feat_p = features.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("features/train.lsf"));
    let head_p = head.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("repr/head.lsw"));
    require(&split_p, "run `synth` first or set --data")?;
    require(&feat_p, "run `extract` first or pass --features")?;
    require(&head_p, "run `train-repr` first or pass --head")?;
    let c = &ctx.config.benchmark;
    let parts = json!({ "hallucinator": c.hallucinator, "seed": c.master_seed });
    let stage = Stage::new(
        ctx.out.join("hallucinator"),
        "hallucinate-prep",
        &parts,
        &[("features", &feat_p), ("head.lsw", &head_p), ("split.json", &split_p)],
        &["centroids.json", "quadruplets.json", "generator.lsg"],
    )?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let feats = load_feature_store(&feat_p)?;
    let split = ClassSplit::load(&split_p)?;
    split.validate(feats.class_count())?;
    let head = LinearClassifier::load(&head_p)?;
    let h = build_hallucinator(&feats, &split.base, &head, &c.hallucinator, hallucinator_seed(c.master_seed))?;
    h.centroids.save(&stage.path("centroids.json"))?;
    save_quadruplets(&h.quadruplets, &stage.path("quadruplets.json"))?;
    h.generator.generator.save(&stage.path("generator.lsg"))?;
    println!(
        "hallucinate-prep: {} quadruplets, generator mse {:.4e}",
        h.quadruplets.len(),
        h.generator.final_mse
    );
    ctx.done(&stage)
}

pub fn lowshot(ctx: &Ctx, data: Option<&Path>) -> Result<(), Failure> {
    let dir = ctx.data_dir(data);
    let (train_p, test_p, split_p) = (dir.join("train.lsf"), dir.join("test.lsf"), dir.join("split.json"));
    for p in [&train_p, &test_p, &split_p] {
        require(p, "run `synth` first or set --data")?;
    }
    let c = &ctx.config.benchmark;
    let stage = Stage::new(
        ctx.out.join("lowshot"),
        "lowshot",
        &json!({ "benchmark": c }),
        &[("train.lsf", &train_p), ("test.lsf", &test_p), ("split.json", &split_p)],
        &["report.json", "report.csv"],
    )?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let train = load_feature_store(&train_p)?;
    let test = load_feature_store(&test_p)?;
    let split = ClassSplit::load(&split_p)?;
    let report = run_benchmark(&train, &test, &split, c, Some(&stage.path("report.partial.json")))?;
    report.save(&stage.path("report.json"))?;
    std::fs::write(stage.path("report.csv"), emit_csv(&report)?)
        .map_err(|e| Failure::Runtime(format!("cannot write report.csv: {e}")))?;
    print!("{}", ReportFormat::Table.render(&report)?);
    ctx.done(&stage)
}

pub fn verify(ctx: &Ctx) -> Result<(), Failure> {
    let v = &ctx.config.verify;
    let stage = Stage::new(ctx.out.join("verify"), "verify", &json!({ "verify": v }), &[], &["theory.json"])?;
    if !ctx.prepare(&stage)? {
        return Ok(());
    }
    let report = run_theory_suite(v)?;
    lowshot::write_json(&stage.path("theory.json"), &report)?;
    ctx.done(&stage)?;
    let lip = report.lipschitz_violations().count();
    let dist = report.distance_violations().count();
    println!(
        "verify: lipschitz {} instances, {lip} violations, worst margin {:.3e}",
        report.lipschitz.len(),
        report.worst_lipschitz_margin().unwrap_or(f64::NAN)
    );
    println!(
        "verify: distance bound {} checks, {dist} violations, {} instances skipped (no convergence)",
        report.distance.reports.len(),
        report.distance.skipped.len()
    );
    println!(
        "verify: grad-norm vs cosine distance over {} points, Spearman {:.4}",
        report.gradnorm.points.len(),
        report.gradnorm.spearman
    );
    if lip + dist > 0 {
        return Err(Failure::Runtime(format!("{} bound violations", lip + dist)));
    }
    Ok(())
}

pub fn report(path: &Path, format: ReportFormat) -> Result<(), Failure> {
    let report = BenchmarkReport::load(path)?;
    print!("{}", format.render(&report)?);
    Ok(())
}
