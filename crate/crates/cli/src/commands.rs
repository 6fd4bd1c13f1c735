use std::path::{Path, PathBuf};

use protext::numerics::Tensor;
use protext::prompt_data::{
    assemble_dataset, assemble_handcrafted, default_queries, generate_outputs, header_path, ClassRecord, FixtureClient,
    HttpClient, LlmClient, PairSource, PromptDataset, QueryTemplate, ATTRIBUTE_TEMPLATES, CLIP_80_TEMPLATES,
};
use protext::synthetic::{default_train_config, run_sweep, run_transfer, Axis, SyntheticWorld};
use protext::text_encoder::{nearest_vocab_words, EncoderWeights, Vocabulary};
use protext::trainer::{ensemble_targets, train, train_adapter, AdapterWeights, PromptCheckpoint, TrainConfig};
use protext::zeroshot_eval::{
    build_head, build_head_adapter, evaluate, plain_template_head, ClassifierHead, HeadProvenance, ImageFeatureSet, Table,
    DEFAULT_TEMPERATURE,
};

use crate::args::{CurateArgs, EncoderPaths, EvalArgs, InspectArgs, SyntheticArgs, TrainArgs, TrainFlags, AblateArgs};
use crate::config::{apply_adapter, apply_train, apply_world, Handcrafted, HeadKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_json, write_text, Recorder};

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(p.clone());
    }
}

fn require(path: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::validation(format!("missing --{name} (or paths.{name} in the config file)")))?;
    if !p.exists() {
        return Err(CliError::validation(format!("--{name}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn merge_encoder(cfg: &mut RunConfig, flags: &EncoderPaths) {
    set_path(&mut cfg.paths.vocab, &flags.vocab);
    set_path(&mut cfg.paths.weights, &flags.weights);
}

fn load_encoder(cfg: &RunConfig, rec: &mut Recorder) -> CliResult<(Vocabulary, EncoderWeights)> {
    let vp = require(&cfg.paths.vocab, "vocab")?;
    let wp = require(&cfg.paths.weights, "weights")?;
    rec.input(&vp)?;
    rec.input_container(&wp)?;
    let vocab = Vocabulary::load(&vp)?;
    let weights = EncoderWeights::load(&wp)?;
    if vocab.len() != weights.vocab_size() {
        return Err(CliError::validation(format!(
            "vocabulary {} has {} tokens but the encoder embeds {}",
            vp.display(),
            vocab.len(),
            weights.vocab_size()
        )));
    }
    Ok((vocab, weights))
}

fn load_dataset(path: &Path, rec: &mut Recorder) -> CliResult<PromptDataset> {
    rec.input(path)?;
    rec.input(&header_path(path))?;
    Ok(PromptDataset::load(path)?)
}

/// Resolves the training config: file (or the command's default), then flags, then the run seed.
fn resolve_train(cfg: &mut RunConfig, flags: &TrainFlags, default: TrainConfig, seed: u64) -> CliResult<TrainConfig> {
    let mut tc = cfg.train.clone().unwrap_or(default);
    apply_train(&mut tc, flags)?;
    tc.seed = seed;
    tc.validate()?;
    cfg.train = Some(tc.clone());
    Ok(tc)
}

fn read_classes(path: &Path) -> CliResult<Vec<ClassRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let classes = if is_json {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match serde_json::from_value::<Vec<String>>(value.clone()) {
            Ok(names) => names.into_iter().enumerate().map(|(i, n)| ClassRecord::new(i as u32, n)).collect(),
            Err(_) => serde_json::from_value::<Vec<ClassRecord>>(value).map_err(|e| {
                CliError::validation(format!("{}: expected a list of names or class records: {e}", path.display()))
            })?,
        }
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, n)| ClassRecord::new(i as u32, n))
            .collect()
    };
    if classes.is_empty() {
        return Err(CliError::validation(format!("{}: no classes", path.display())));
    }
    Ok(classes)
}

fn read_queries(path: &Path) -> CliResult<Vec<QueryTemplate>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let queries = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, t)| QueryTemplate::new(i as u32, t))
        .collect::<protext::Result<Vec<_>>>()?;
    if queries.is_empty() {
        return Err(CliError::validation(format!("{}: no queries", path.display())));
    }
    Ok(queries)
}

pub fn curate(cfg: &mut RunConfig, args: &CurateArgs, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    set_path(&mut cfg.paths.classes, &args.classes);
    set_path(&mut cfg.paths.queries, &args.queries);
    set_path(&mut cfg.paths.fixtures, &args.fixtures);
    let s = &mut cfg.curate;
    if let Some(m) = args.per_query {
        s.per_query = m;
    }
    if args.num_queries.is_some() {
        s.num_queries = args.num_queries;
    }
    if args.handcrafted.is_some() {
        s.handcrafted = args.handcrafted;
    }
    if let Some(t) = &args.template {
        s.template = t.clone();
    }
    if let Some(r) = args.max_retries {
        s.retry.max_retries = r;
    }
    let s = cfg.curate.clone();
    if s.handcrafted.is_some() && cfg.paths.fixtures.is_some() {
        return Err(CliError::validation("--handcrafted and --fixtures are alternative sources; pass one"));
    }

    let classes_path = require(&cfg.paths.classes, "classes")?;
    rec.input(&classes_path)?;
    let classes = read_classes(&classes_path)?;

    let dataset = if let Some(h) = s.handcrafted {
        let (templates, source): (&[&str], _) = match h {
            Handcrafted::Clip80 => (&CLIP_80_TEMPLATES, PairSource::Handcrafted80),
            Handcrafted::Attribute => (&ATTRIBUTE_TEMPLATES, PairSource::HandcraftedAttribute),
        };
        assemble_handcrafted(&classes, &s.template, templates, source)?
    } else {
        let mut queries = match &cfg.paths.queries {
            Some(_) => {
                let p = require(&cfg.paths.queries, "queries")?;
                rec.input(&p)?;
                read_queries(&p)?
            }
            None => default_queries(),
        };
        if let Some(n) = s.num_queries {
            if n == 0 || n > queries.len() {
                return Err(CliError::validation(format!("--num-queries {n} out of range 1..={}", queries.len())));
            }
            queries.truncate(n);
        }
        let (client, generator): (Box<dyn LlmClient>, String) = if let Some(dir) = &cfg.paths.fixtures {
            if !dir.is_dir() {
                return Err(CliError::validation(format!("--fixtures: {} is not a directory", dir.display())));
            }
            let fixtures = FixtureClient::new(dir);
            for c in &classes {
                for q in &queries {
                    let p = fixtures.path_for(c.class_id, q.id);
                    if p.is_file() {
                        rec.input(&p)?;
                    }
                }
            }
            (Box::new(fixtures), "fixture".to_string())
        } else if let Some(http) = HttpClient::from_env() {
            let name = format!("http {}", http.url);
            (Box::new(http), name)
        } else {
            return Err(CliError::validation(
                "no completion source: pass --fixtures DIR or --handcrafted, or set PROTEXT_LLM_URL",
            ));
        };
        log::info!("requesting {} completions x {} queries x {} classes", s.per_query, queries.len(), classes.len());
        let generated = generate_outputs(&classes, &queries, client.as_ref(), s.per_query, s.retry)?;
        assemble_dataset(&classes, &s.template, generated, &generator)?
    };

    let path = out.join("dataset.jsonl");
    dataset.save(&path)?;
    rec.output(header_path(&path));
    rec.output(path.clone());
    println!("{} pairs for {} classes -> {}", dataset.len(), dataset.classes.len(), path.display());
    if dataset.meta.dropped > 0 {
        println!("{} blank completions dropped", dataset.meta.dropped);
    }
    Ok(())
}

pub fn train_cmd(cfg: &mut RunConfig, args: &TrainArgs, seed: u64, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    merge_encoder(cfg, &args.encoder);
    set_path(&mut cfg.paths.dataset, &args.dataset);
    let tc = resolve_train(cfg, &args.train, TrainConfig::default(), seed)?;
    cfg.adapter = apply_adapter(cfg.adapter, args.adapter, args.adapter_alpha, args.adapter_reduction);
    if cfg.adapter.is_none() && (args.adapter_alpha.is_some() || args.adapter_reduction.is_some()) {
        return Err(CliError::validation("--adapter-alpha and --adapter-reduction need --adapter"));
    }

    let (vocab, weights) = load_encoder(cfg, rec)?;
    let dataset = load_dataset(&require(&cfg.paths.dataset, "dataset")?, rec)?;
    log::info!(
        "training on {} pairs / {} classes, {} epochs, batch {}",
        dataset.len(),
        dataset.classes.len(),
        tc.epochs,
        tc.batch_size
    );

    let trace = if let Some(ac) = &cfg.adapter {
        let run = train_adapter(&dataset, &vocab, &weights, &tc, ac)?;
        let path = out.join("adapter.json");
        run.adapter.save(&path)?;
        rec.output_container(path);
        run.trace
    } else {
        let run = train(&dataset, &vocab, &weights, &tc)?;
        let path = out.join("prompts.json");
        run.checkpoint.save(&path)?;
        rec.output_container(path);
        run.trace
    };
    let csv = out.join("loss.csv");
    trace.write_csv(&csv)?;
    rec.output(csv);
    match trace.final_loss() {
        Some(l) => println!("{} steps, final epoch loss {l:.6}", trace.rows.len()),
        None => println!("0 steps; checkpoint holds the initial prompts"),
    }
    Ok(())
}

fn ensembled_head(
    dataset: &PromptDataset,
    names: &[String],
    vocab: &Vocabulary,
    weights: &EncoderWeights,
) -> CliResult<ClassifierHead> {
    let targets = ensemble_targets(dataset, vocab, weights)?;
    let rows = names
        .iter()
        .map(|n| {
            let c = dataset.classes.iter().find(|c| &c.name == n).ok_or_else(|| {
                CliError::validation(format!("class {n:?} from the features file has no descriptions in the dataset"))
            })?;
            Ok(targets[&c.class_id].data().to_vec())
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ClassifierHead::new(Tensor::from_rows(&rows)?, names.to_vec(), HeadProvenance::Ensembled, DEFAULT_TEMPERATURE)?)
}

pub fn eval(cfg: &mut RunConfig, args: &EvalArgs, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    merge_encoder(cfg, &args.encoder);
    set_path(&mut cfg.paths.features, &args.features);
    set_path(&mut cfg.paths.checkpoint, &args.checkpoint);
    set_path(&mut cfg.paths.adapter, &args.adapter);
    set_path(&mut cfg.paths.dataset, &args.dataset);
    if let Some(h) = args.head {
        cfg.eval.head = h;
    }
    if let Some(t) = args.temperature {
        cfg.eval.temperature = t;
    }
    if let Some(t) = &args.template {
        cfg.eval.template = t.clone();
    }
    let s = cfg.eval.clone();

    let fp = require(&cfg.paths.features, "features")?;
    if is_jsonl(&fp) {
        rec.input(&fp)?;
    } else {
        rec.input_container(&fp)?;
    }
    let images = ImageFeatureSet::load(&fp)?;
    let (vocab, weights) = load_encoder(cfg, rec)?;
    let dataset = match &cfg.paths.dataset {
        Some(_) => Some(load_dataset(&require(&cfg.paths.dataset, "dataset")?, rec)?),
        None => None,
    };
    let classes: Vec<ClassRecord> = images
        .class_names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut c = ClassRecord::new(i as u32, n.as_str());
            if let Some(r) = dataset.as_ref().and_then(|d| d.classes.iter().find(|r| &r.name == n)) {
                c.concept_suffix = r.concept_suffix.clone();
            }
            c
        })
        .collect();

    let head = match s.head {
        HeadKind::Prompted => {
            let p = require(&cfg.paths.checkpoint, "checkpoint")?;
            rec.input_container(&p)?;
            let checkpoint = PromptCheckpoint::load_for(&p, &weights)?;
            build_head(&classes, &checkpoint, &vocab, &weights, &s.template)?
        }
        HeadKind::Plain => plain_template_head(&classes, &vocab, &weights, &s.template)?,
        HeadKind::Ensembled => {
            let ds = dataset.as_ref().ok_or_else(|| CliError::validation("--head ensembled needs --dataset"))?;
            ensembled_head(ds, &images.class_names, &vocab, &weights)?
        }
        HeadKind::Adapter => {
            let p = require(&cfg.paths.adapter, "adapter")?;
            rec.input_container(&p)?;
            let adapter = AdapterWeights::load(&p)?;
            build_head_adapter(&classes, &adapter, &vocab, &weights, &s.template)?
        }
    }
    .with_temperature(s.temperature)?;

    let (report, _) = evaluate(&images, &head, s.head.as_str())?;
    let json = out.join("report.json");
    write_text(&json, &(report.to_json()? + "\n"))?;
    let txt = out.join("report.txt");
    let text = report.render_text();
    write_text(&txt, &text)?;
    rec.output(json);
    rec.output(txt);
    print!("{text}");
    Ok(())
}

pub fn inspect(cfg: &mut RunConfig, args: &InspectArgs, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    merge_encoder(cfg, &args.encoder);
    set_path(&mut cfg.paths.checkpoint, &args.checkpoint);
    if let Some(k) = args.k {
        cfg.inspect.k = k;
    }
    let (vocab, weights) = load_encoder(cfg, rec)?;
    let p = require(&cfg.paths.checkpoint, "checkpoint")?;
    rec.input_container(&p)?;
    let checkpoint = PromptCheckpoint::load_for(&p, &weights)?;
    let nearest = nearest_vocab_words(&checkpoint.prompts, &weights, &vocab, cfg.inspect.k)?;

    let mut table = Table::new(vec!["layer".into(), "position".into(), "nearest words (distance)".into()]);
    for (j, layer) in nearest.iter().enumerate() {
        for (r, words) in layer.iter().enumerate() {
            let listed: Vec<String> = words.iter().map(|w| format!("{} ({:.4})", w.word, w.distance)).collect();
            table.push(vec![j.to_string(), r.to_string(), listed.join(", ")]);
        }
    }
    let json = out.join("nearest.json");
    write_json(&json, &nearest)?;
    let txt = out.join("nearest.txt");
    let text = table.render() + "\n";
    write_text(&txt, &text)?;
    rec.output(json);
    rec.output(txt);
    print!("{text}");
    Ok(())
}

pub fn ablate(cfg: &mut RunConfig, args: &AblateArgs, seed: u64, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    apply_world(&mut cfg.synthetic, &args.world);
    cfg.synthetic = cfg.synthetic.reseeded(seed);
    let tc = resolve_train(cfg, &args.train, default_train_config(seed), seed)?;
    if !args.axes.is_empty() {
        cfg.ablate.axes = args.axes.clone();
    }
    if cfg.ablate.axes.is_empty() {
        return Err(CliError::validation("empty sweep: pass at least one --axis NAME=V1,V2"));
    }
    let axes = cfg.ablate.axes.iter().map(|a| Axis::parse(a)).collect::<protext::Result<Vec<_>>>()?;

    let world = SyntheticWorld::build(&cfg.synthetic)?;
    log::info!("sweeping {} on a {}-class world", cfg.ablate.axes.join(" x "), cfg.synthetic.classes);
    let report = run_sweep(&world, &tc, &axes)?;

    let csv = out.join("sweep.csv");
    report.write_csv(&csv)?;
    let json = out.join("sweep.json");
    write_json(&json, &report)?;
    let txt = out.join("sweep.txt");
    let text = report.render_text();
    write_text(&txt, &text)?;
    rec.output(csv);
    rec.output(json);
    rec.output(txt);
    print!("{text}");
    Ok(())
}

pub fn synthetic(cfg: &mut RunConfig, args: &SyntheticArgs, seed: u64, out: &Path, rec: &mut Recorder) -> CliResult<()> {
    apply_world(&mut cfg.synthetic, &args.world);
    cfg.synthetic = cfg.synthetic.reseeded(seed);
    cfg.export_world |= args.export_world;
    let tc = resolve_train(cfg, &args.train, default_train_config(seed), seed)?;

    let world = SyntheticWorld::build(&cfg.synthetic)?;
    log::info!(
        "world: {} classes ({} base), {} descriptions and {} images per class",
        cfg.synthetic.classes,
        cfg.synthetic.base_classes,
        cfg.synthetic.descriptions_per_class,
        cfg.synthetic.images_per_class
    );
    let run = run_transfer(&world, &tc)?;

    let mut text = run.report.render_text();
    if let Some(l) = run.report.final_loss {
        text.push_str(&format!("final training loss {l:.6}\n"));
    }
    let json = out.join("report.json");
    write_json(&json, &run.report)?;
    let txt = out.join("report.txt");
    write_text(&txt, &text)?;
    let prompts = out.join("prompts.json");
    run.checkpoint.save(&prompts)?;
    let csv = out.join("loss.csv");
    run.trace.write_csv(&csv)?;
    rec.output(json);
    rec.output(txt);
    rec.output_container(prompts);
    rec.output(csv);

    if cfg.export_world {
        let dir = out.join("world");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let vocab = dir.join("vocab.json");
        world.vocab.save(&vocab)?;
        let weights = dir.join("weights.json");
        world.weights.save(&weights)?;
        let dataset = dir.join("dataset.jsonl");
        world.dataset.save(&dataset)?;
        let images = dir.join("images.json");
        world.images.save(&images)?;
        rec.output(vocab);
        rec.output_container(weights);
        rec.output(header_path(&dataset));
        rec.output(dataset);
        rec.output_container(images);
    }
    print!("{text}");
    Ok(())
}
