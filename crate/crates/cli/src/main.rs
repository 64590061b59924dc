//! Command line for the text circuit laboratory: seeded dataset
//! generation, training with per-epoch checkpoints, evaluation into
//! prediction files and composition reports, fragment interpretation, and
//! cross-run report aggregation.
//!
//! Every run writes a config snapshot and records the content hash of its
//! input artifacts, so any result can be reproduced from its directory.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use textcirc::backend::BackendConfig;
use textcirc::dataset::{
    self, gen_overgeneralisation, gen_productivity, gen_substitutivity, gen_systematicity,
    DatasetBundle, ProductivityConfig, Scheme, SubstitutivityConfig, SystematicityConfig,
    TaskKind,
};
use textcirc::fragments::{
    assertion_relative_matrix, box_overlap_matrix, build_fragment, Cast, FragmentSpec, VerbChoice,
};
use textcirc::grammar::{build_assertion_pair, parse_story_text, Question};
use textcirc::metrics::{CompositionReport, PredictionRecord, ReportInputs};
use textcirc::neural::{Activation, NeuralConfig, Schema};
use textcirc::params::load_checkpoint;
use textcirc::quantum::QuantumConfig;
use textcirc::train::{
    compile_examples, load_logs_csv, predict_records, select_model, train, CurriculumConfig,
    CurriculumMode, RunConfig,
};

#[derive(Parser)]
#[command(name = "textcirc", version, about = "Compositional QA over text circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset bundle (files + manifest) for one task.
    Generate(GenerateArgs),
    /// Train a model, writing checkpoints and per-epoch metrics.
    Train(TrainArgs),
    /// Select a checkpoint per scheme, emit predictions and a report.
    Evaluate(EvaluateArgs),
    /// Compare learnt boxes and diagram fragments from a checkpoint.
    Interpret(InterpretArgs),
    /// Aggregate evaluation reports across runs into one table.
    Report(ReportArgs),
    /// Print the serialized diagram of a story.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON generator config for the task; the file is the schema.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corruption fractions for the overgeneralisation task.
    #[arg(long, default_value = "0.1,0.2,0.3,0.5")]
    fractions: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// quantum | neural
    #[arg(long, default_value = "quantum")]
    backend: String,
    /// JSON RunConfig; individual flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    curriculum: bool,
    #[arg(long)]
    curriculum_epochs: Option<usize>,
    /// smooth | step
    #[arg(long)]
    curriculum_mode: Option<String>,
    #[arg(long)]
    tie_synonyms: bool,
    /// Neural wire dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// linear | flat | hidden:2 | hidden:1,1
    #[arg(long)]
    schema: Option<String>,
    /// relu | mish
    #[arg(long)]
    activation: Option<String>,
    /// Sim4 layers for the quantum ansatz.
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: Option<String>,
    /// Evaluate a specific epoch instead of replaying selection.
    #[arg(long)]
    epoch: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    epoch: Option<usize>,
    /// Assertion target as `person:location`.
    #[arg(long)]
    assertion: String,
    /// Comma-separated fragment specs, e.g. `ID,Ap,Ap-Ak`.
    #[arg(long)]
    fragments: Option<String>,
    /// File with one fragment spec per line.
    #[arg(long)]
    fragment_file: Option<PathBuf>,
    /// Cast overrides as `A=Andrew,C=Clara,p=park,k=kitchen,o=milk`.
    #[arg(long)]
    cast: Option<String>,
    /// Words for a box-overlap matrix.
    #[arg(long)]
    words: Option<String>,
    /// Shape of those words: a string over P, O, L such as `P` or `PL`.
    #[arg(long, default_value = "P")]
    shape: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Comma-separated run directories holding eval reports.
    #[arg(long)]
    runs: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Story file: one sentence per line, optional final `Q. ...` line.
    #[arg(long)]
    story: Option<PathBuf>,
    /// Inline story text with `\n`-separated sentences.
    #[arg(long)]
    text: Option<String>,
    /// Also print the frame-free expansion.
    #[arg(long)]
    expand: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Interpret(args) => cmd_interpret(args),
        Command::Report(args) => cmd_report(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let task: TaskKind = match args.task.as_str() {
        "productivity" => TaskKind::Productivity,
        "systematicity" => TaskKind::Systematicity,
        "substitutivity" => TaskKind::Substitutivity,
        "overgeneralisation" => TaskKind::Overgeneralisation,
        other => bail!("unknown task `{other}`"),
    };
    match task {
        TaskKind::Productivity => {
            let cfg: ProductivityConfig = match &args.config {
                Some(p) => load_json(p)?,
                None => ProductivityConfig::default(),
            };
            let bundle = gen_productivity(&cfg, args.seed)?;
            let hash = dataset::write_bundle(&args.out_dir, &bundle)?;
            println!("wrote {} (hash {hash})", args.out_dir.display());
        }
        TaskKind::Systematicity => {
            let cfg: SystematicityConfig = match &args.config {
                Some(p) => load_json(p)?,
                None => SystematicityConfig::default(),
            };
            let bundle = gen_systematicity(&cfg, args.seed)?;
            let hash = dataset::write_bundle(&args.out_dir, &bundle)?;
            println!("wrote {} (hash {hash})", args.out_dir.display());
        }
        TaskKind::Substitutivity => {
            let cfg: SubstitutivityConfig = match &args.config {
                Some(p) => load_json(p)?,
                None => SubstitutivityConfig::default(),
            };
            let bundle = gen_substitutivity(&cfg, args.seed)?;
            let hash = dataset::write_bundle(&args.out_dir, &bundle)?;
            println!("wrote {} (hash {hash})", args.out_dir.display());
        }
        TaskKind::Overgeneralisation => {
            let cfg: ProductivityConfig = match &args.config {
                Some(p) => load_json(p)?,
                None => ProductivityConfig {
                    // Corruption runs train on deeper contexts.
                    train_depths: (2, 8),
                    test_depths: (9, 10),
                    ..ProductivityConfig::default()
                },
            };
            let fractions: Vec<f64> = args
                .fractions
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad fraction: {e}")))
                .collect::<Result<_>>()?;
            let base = gen_productivity(&cfg, args.seed)?;
            let bundles = gen_overgeneralisation(&base, &fractions, args.seed ^ 0x09e0)?;
            std::fs::create_dir_all(&args.out_dir)?;
            let mut hashes = vec![dataset::write_bundle(&args.out_dir.join("base"), &base)?];
            for (bundle, fraction) in bundles.iter().zip(&fractions) {
                let name = format!("corrupt_{:02}", (fraction * 100.0).round() as u32);
                hashes.push(dataset::write_bundle(&args.out_dir.join(&name), bundle)?);
            }
            std::fs::write(
                args.out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "task": "overgeneralisation",
                    "seed": args.seed,
                    "fractions": fractions,
                    "content_hashes": hashes,
                }))?,
            )?;
            println!("wrote {}", args.out_dir.display());
        }
    }
    Ok(())
}

fn parse_schema(text: &str) -> Result<Schema> {
    if text == "linear" {
        return Ok(Schema::Linear);
    }
    if text == "flat" {
        return Ok(Schema::Flat);
    }
    if let Some(rest) = text.strip_prefix("hidden:") {
        let dims: Vec<usize> = rest
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| anyhow!("bad hidden dims: {e}")))
            .collect::<Result<_>>()?;
        return Ok(Schema::Hidden(dims));
    }
    bail!("unknown schema `{text}`")
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let bundle = dataset::read_bundle(&args.data)?;
    let mut run: RunConfig = match &args.config {
        Some(p) => load_json(p)?,
        None => match args.backend.as_str() {
            "quantum" => RunConfig::quantum_defaults(bundle.task),
            "neural" => RunConfig::neural_defaults(bundle.task),
            other => bail!("unknown backend `{other}`"),
        },
    };
    // Switch the backend family when --backend disagrees with the config.
    match (args.backend.as_str(), &run.backend) {
        ("quantum", BackendConfig::Neural(_)) => {
            run.backend = BackendConfig::Quantum(QuantumConfig::default());
        }
        ("neural", BackendConfig::Quantum(_)) => {
            run.backend = BackendConfig::Neural(NeuralConfig::default());
        }
        _ => {}
    }
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    if args.deterministic {
        run.deterministic = true;
    }
    if let Some(lr) = args.lr {
        run.learning_rate = lr;
    }
    if let Some(bs) = args.batch_size {
        run.batch_size = bs;
    }
    if let Some(ep) = args.epochs {
        run.max_epochs = ep;
    }
    if let Some(s) = &args.scheme {
        run.scheme = s.parse::<Scheme>()?;
    }
    if args.curriculum {
        run.curriculum.enabled = true;
    }
    if let Some(ce) = args.curriculum_epochs {
        run.curriculum =
            CurriculumConfig { enabled: true, curriculum_epochs: ce, ..run.curriculum };
    }
    if let Some(mode) = &args.curriculum_mode {
        run.curriculum.mode = match mode.as_str() {
            "smooth" => CurriculumMode::Smooth,
            "step" => CurriculumMode::Step,
            other => bail!("unknown curriculum mode `{other}`"),
        };
    }
    match &mut run.backend {
        BackendConfig::Quantum(q) => {
            if args.tie_synonyms {
                q.tie_synonyms = true;
            }
            if let Some(l) = args.layers {
                q.layers = l;
            }
        }
        BackendConfig::Neural(n) => {
            if args.tie_synonyms {
                n.tie_synonyms = true;
            }
            if let Some(d) = args.dim {
                n.dim = d;
            }
            if let Some(s) = &args.schema {
                n.schema = parse_schema(s)?;
            }
            if let Some(a) = &args.activation {
                n.activation = match a.as_str() {
                    "relu" => Activation::Relu,
                    "mish" => Activation::Mish,
                    other => bail!("unknown activation `{other}`"),
                };
            }
        }
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let data_manifest: serde_json::Value = load_json(&args.data.join("manifest.json"))?;
    std::fs::write(
        args.out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "data_dir": args.data.display().to_string(),
            "data_content_hash": data_manifest.get("content_hash"),
            "task": bundle.task.to_string(),
        }))?,
    )?;
    let out = train(&run, &bundle, Some(&args.out_dir))?;
    let selected =
        select_model(&out.logs, run.scheme).ok_or_else(|| anyhow!("no epochs trained"))?;
    println!(
        "trained {} epochs; scheme {} selects {}",
        out.logs.len(),
        run.scheme,
        out.logs[selected].checkpoint
    );
    Ok(())
}

/// Predictions for every split of the bundle at one checkpoint.
fn evaluate_checkpoint(
    run: &RunConfig,
    store: &textcirc::ParameterStore,
    bundle: &DatasetBundle,
    out_dir: &Path,
) -> Result<CompositionReport> {
    let backend = run.backend.build();
    let predictions_dir = out_dir.join("predictions");
    std::fs::create_dir_all(&predictions_dir)?;
    let mut records: std::collections::BTreeMap<&'static str, Vec<PredictionRecord>> =
        Default::default();
    for (split, examples) in bundle.splits() {
        let compiled = compile_examples(examples)?;
        let recs = predict_records(backend.as_ref(), &compiled, examples, store)?;
        textcirc::metrics::write_predictions(
            &predictions_dir.join(format!("{split}.jsonl")),
            &recs,
        )?;
        records.insert(split, recs);
    }
    let empty = Vec::new();
    let report = CompositionReport::build(&ReportInputs {
        train: records.get("train").unwrap_or(&empty),
        test: records.get("test").unwrap_or(&empty),
        valid_v: records.get("valid_v").unwrap_or(&empty),
        valid_a: records.get("valid_a").unwrap_or(&empty),
        valid_b: records.get("valid_b").unwrap_or(&empty),
        valid_c: records.get("valid_c").unwrap_or(&empty),
        train_prime: records.get("train_prime").map(|v| v.as_slice()),
        class_prior: bundle.class_prior,
        epsilons: &[0.05, 0.1, 0.25],
    })?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out_dir.join("report.txt"), report.render_text())?;
    Ok(report)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let run: RunConfig = load_json(&args.run.join("config.json"))?;
    let scheme = match &args.scheme {
        Some(s) => s.parse::<Scheme>()?,
        None => run.scheme,
    };
    let logs = load_logs_csv(&args.run.join("metrics.csv"))?;
    let epoch = match args.epoch {
        Some(e) => e,
        None => {
            let idx = select_model(&logs, scheme).ok_or_else(|| anyhow!("no logged epochs"))?;
            logs[idx].epoch
        }
    };
    let name = format!("epoch_{epoch:03}");
    let (_, store) = load_checkpoint(&args.run.join("checkpoints"), &name)?;
    let bundle = dataset::read_bundle(&args.data)?;
    let out_dir = args.out_dir.unwrap_or_else(|| args.run.join(format!("eval_{scheme}")));
    std::fs::create_dir_all(&out_dir)?;
    let report = evaluate_checkpoint(&run, &store, &bundle, &out_dir)?;
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "run_dir": args.run.display().to_string(),
            "checkpoint": name,
            "scheme": scheme.to_string(),
            "data_dir": args.data.display().to_string(),
        }))?,
    )?;
    println!("checkpoint {name} (scheme {scheme})");
    print!("{}", report.render_text());
    Ok(())
}

fn parse_cast(text: &str) -> Result<Cast> {
    let mut letters = Vec::new();
    for part in text.split(',') {
        let (l, n) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("cast entries look like `A=Andrew`"))?;
        let letter = l.trim().chars().next().ok_or_else(|| anyhow!("empty cast letter"))?;
        letters.push((letter, n.trim().to_string()));
    }
    Ok(Cast { letters })
}

fn parse_shape(text: &str) -> Result<Vec<textcirc::WireType>> {
    text.chars()
        .map(|c| match c {
            'P' => Ok(textcirc::WireType::P),
            'O' => Ok(textcirc::WireType::O),
            'L' => Ok(textcirc::WireType::L),
            other => Err(anyhow!("unknown wire type `{other}`")),
        })
        .collect()
}

fn cmd_interpret(args: InterpretArgs) -> Result<()> {
    let run: RunConfig = load_json(&args.run.join("config.json"))?;
    let logs = load_logs_csv(&args.run.join("metrics.csv"))?;
    let epoch = match args.epoch {
        Some(e) => e,
        None => {
            let idx =
                select_model(&logs, run.scheme).ok_or_else(|| anyhow!("no logged epochs"))?;
            logs[idx].epoch
        }
    };
    let (_, store) =
        load_checkpoint(&args.run.join("checkpoints"), &format!("epoch_{epoch:03}"))?;
    let cast = match &args.cast {
        Some(c) => parse_cast(c)?,
        None => Cast::default(),
    };
    let (person, location) = args
        .assertion
        .split_once(':')
        .ok_or_else(|| anyhow!("assertion looks like `Andrew:park`"))?;
    let question = Question { person: person.to_string(), location: location.to_string() };
    let (yes, no) = build_assertion_pair(&question);

    let mut out = String::new();
    if let Some(words) = &args.words {
        let shape = parse_shape(&args.shape)?;
        let words: Vec<&str> = words.split(',').map(str::trim).collect();
        let m = box_overlap_matrix(&words, &shape, &store, &run.backend)?;
        out.push_str(&format!("box overlaps ({})\n,{}\n", args.shape, words.join(",")));
        for (i, row) in m.iter().enumerate() {
            out.push_str(&format!(
                "{},{}\n",
                words[i],
                row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
            ));
        }
        out.push('\n');
    }

    let mut specs: Vec<String> = Vec::new();
    if let Some(f) = &args.fragments {
        specs.extend(f.split(',').map(|s| s.trim().to_string()));
    }
    if let Some(path) = &args.fragment_file {
        let text = std::fs::read_to_string(path)?;
        specs.extend(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()));
    }
    if !specs.is_empty() {
        let person_wire = cast
            .nouns()
            .iter()
            .position(|(n, _)| n == &question.person)
            .ok_or_else(|| anyhow!("assertion person not in cast"))?;
        let location_wire = cast
            .nouns()
            .iter()
            .position(|(n, _)| n == &question.location)
            .ok_or_else(|| anyhow!("assertion location not in cast"))?;
        let targets = [person_wire, location_wire];
        let verbs = VerbChoice::default();
        let mut fragments = Vec::new();
        for s in &specs {
            let spec = FragmentSpec::parse(s, &cast)?;
            fragments.push(build_fragment(&spec, &verbs)?);
        }
        for (label, assertion) in [("yes", &yes), ("no", &no)] {
            let m =
                assertion_relative_matrix(&fragments, assertion, targets, &store, &run.backend)?;
            out.push_str(&format!(
                "assertion-relative overlaps ({label}: {})\n,{}\n",
                if label == "yes" { "is in" } else { "is not in" },
                specs.join(",")
            ));
            for (i, row) in m.iter().enumerate() {
                out.push_str(&format!(
                    "{},{}\n",
                    specs[i],
                    row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
                ));
            }
            out.push('\n');
        }
    }
    if out.is_empty() {
        bail!("nothing to do: pass --words or --fragments/--fragment-file");
    }
    print!("{out}");
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("overlaps.csv"), out)?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut rows = vec![
        "run,acc_train,acc_test,c_fact,c_score,estimate_ab,estimate_all,acc_train_prime"
            .to_string(),
    ];
    for dir in args.runs.split(',') {
        let dir = dir.trim();
        // Accept either a run dir with eval_* subdirs or a direct eval dir.
        let mut report_paths: Vec<PathBuf> = Vec::new();
        let direct = Path::new(dir).join("report.json");
        if direct.exists() {
            report_paths.push(direct);
        } else if let Ok(entries) = std::fs::read_dir(dir) {
            for entry in entries.flatten() {
                let p = entry.path().join("report.json");
                if p.exists() {
                    report_paths.push(p);
                }
            }
        }
        if report_paths.is_empty() {
            bail!("no report.json under {dir}");
        }
        report_paths.sort();
        for path in report_paths {
            let report: CompositionReport = load_json(&path)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            rows.push(format!(
                "{},{},{},{},{},{},{},{}",
                path.parent().unwrap().display(),
                report.acc_train,
                report.acc_test,
                report.c_fact,
                report.c_score,
                opt(report.estimate_ab),
                opt(report.estimate_all),
                opt(report.acc_train_prime),
            ));
        }
    }
    let body = rows.join("\n") + "\n";
    std::fs::write(&args.out, &body)?;
    print!("{body}");
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let text = match (&args.story, &args.text) {
        (Some(path), None) => std::fs::read_to_string(path)?,
        (None, Some(t)) => t.replace("\\n", "\n"),
        _ => bail!("pass exactly one of --story or --text"),
    };
    let (story, question) = parse_story_text(&text)?;
    let diagram = textcirc::grammar::build_story_diagram(&story);
    print!("{}", diagram.serialize_text());
    if args.expand {
        println!("expanded:");
        print!("{}", diagram.sandwich_expand()?.serialize_text());
    }
    if let Some(q) = question {
        let (yes, no) = build_assertion_pair(&q);
        println!("yes assertion:");
        print!("{}", yes.serialize_text());
        println!("no assertion:");
        print!("{}", no.serialize_text());
    }
    Ok(())
}
