use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use spinelink_core::assignment::Assignment;
use spinelink_core::classifier::{cross_validated_scores, read_scores, score_all, train_forest, write_scores, ForestModel};
use spinelink_core::features::{read_feature_table, write_feature_table, FeatureRow};
use spinelink_core::grammar::{lint_graph, violation_report, ObjectAdjacencyGraph};
use spinelink_core::linker::{assign, rank, ranked_csv, CandidateSet, CandidateTree};
use spinelink_core::metrics::{simulate_fragmentation, GraphContext};
use spinelink_core::synthgen::{detach_spines, generate_phantom, DetachConfig, Phantom};
use spinelink_core::volume::{
    read_grid, read_manifest, read_volume, write_grid, write_manifest, write_volume, Connectivity, FormatError, Manifest,
};
use spinelink_core::workflow::{candidate_sets, feature_rows, scored_trees, spine_groups, training_examples};

use crate::config::{RunConfig, ScoreMode};
use crate::error::CliError;
use crate::layout::{Layout, VolumeFiles};
use crate::manifest::{sha256_file, RunManifest, StageRecord};
use crate::plot::emit_plots;
use crate::report::build_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Fragment,
    Features,
    Train,
    Score,
    Link,
    Evaluate,
    Simulate,
}

/// Stage order used by `all`.
pub const PIPELINE: [Stage; 8] = [
    Stage::Generate,
    Stage::Fragment,
    Stage::Features,
    Stage::Train,
    Stage::Score,
    Stage::Link,
    Stage::Evaluate,
    Stage::Simulate,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Fragment => "fragment",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Link => "link",
            Stage::Evaluate => "evaluate",
            Stage::Simulate => "simulate",
        }
    }

    /// Files the stage cannot run without.
    pub fn required_inputs(self, l: &Layout, cfg: &RunConfig) -> Vec<PathBuf> {
        let p = l.phantom();
        let f = l.fragmented();
        match self {
            Stage::Generate => vec![],
            Stage::Fragment => p.all(),
            Stage::Features => vec![f.volume, f.manifest, f.membrane],
            Stage::Train => vec![l.features(), f.manifest, f.truth],
            Stage::Score => match cfg.score_mode {
                ScoreMode::Cv => vec![l.features(), f.manifest, f.truth],
                ScoreMode::Model => vec![l.features(), f.manifest, l.model()],
            },
            Stage::Link => vec![l.candidates(), l.features(), l.scores()],
            Stage::Evaluate => vec![l.trees(), f.manifest, f.truth],
            Stage::Simulate => vec![p.manifest, p.truth],
        }
    }

    /// Files read when present.
    pub fn optional_inputs(self, l: &Layout) -> Vec<PathBuf> {
        match self {
            Stage::Features | Stage::Score => vec![l.fragmented().truth],
            _ => vec![],
        }
    }

    pub fn outputs(self, l: &Layout) -> Vec<PathBuf> {
        match self {
            Stage::Generate => l.phantom().all(),
            Stage::Fragment => {
                let mut v = l.fragmented().all();
                v.push(l.renamed());
                v
            }
            Stage::Features => vec![l.lint_text(), l.lint_json(), l.candidates(), l.features()],
            Stage::Train => vec![l.model()],
            Stage::Score => vec![l.scores()],
            Stage::Link => vec![l.trees(), l.assignment_json(), l.assignment_csv(), l.ranked()],
            Stage::Evaluate => vec![l.report_json(), l.report_md(), l.topk(), l.graph_f1()],
            Stage::Simulate => vec![l.curve_csv(), l.curve_svg(), l.curve_plot_json()],
        }
    }
}

fn format_err(stage: Stage, e: FormatError) -> CliError {
    CliError::data(stage.name(), e)
}

fn read_json<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::data(stage.name(), format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::data(stage.name(), format!("{}: {e}", path.display())))
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::stage(stage.name(), format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::stage(stage.name(), e))?;
    write_text(stage, path, &(text + "\n"))
}

fn read_phantom(stage: Stage, files: &VolumeFiles) -> Result<Phantom<f64>, CliError> {
    Ok(Phantom {
        volume: read_volume(&files.volume).map_err(|e| format_err(stage, e))?,
        manifest: read_manifest(&files.manifest).map_err(|e| format_err(stage, e))?,
        membrane: read_grid(&files.membrane).map_err(|e| format_err(stage, e))?,
        truth: read_json(stage, &files.truth)?,
    })
}

fn write_phantom(stage: Stage, files: &VolumeFiles, p: &Phantom<f64>) -> Result<(), CliError> {
    let err = |e: FormatError| CliError::stage(stage.name(), e);
    write_volume(&p.volume, &files.volume).map_err(err)?;
    write_manifest(&p.manifest, &files.manifest).map_err(err)?;
    write_grid(&p.membrane, &files.membrane).map_err(err)?;
    write_json(stage, &files.truth, &p.truth)
}

fn read_rows(stage: Stage, path: &Path) -> Result<Vec<FeatureRow<f64>>, CliError> {
    let f = File::open(path).map_err(|e| CliError::data(stage.name(), format!("{}: {e}", path.display())))?;
    read_feature_table(BufReader::new(f)).map_err(|e| CliError::data(stage.name(), format!("{}: {e}", path.display())))
}

fn read_optional_truth(stage: Stage, path: &Path) -> Result<Option<Assignment>, CliError> {
    if path.exists() {
        read_json(stage, path).map(Some)
    } else {
        Ok(None)
    }
}

/// Run one stage against the files in `layout`. Inputs must already exist.
pub fn run_stage(stage: Stage, cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    for p in stage.required_inputs(layout, cfg) {
        if !p.exists() {
            return Err(CliError::data(stage.name(), format!("missing input {}", p.display())));
        }
    }
    let name = stage.name();
    let fail = |e: &dyn std::fmt::Display| CliError::stage(name, e);
    let frag = layout.fragmented();
    match stage {
        Stage::Generate => {
            let p = generate_phantom(&cfg.phantom).map_err(|e| fail(&e))?;
            log::info!("phantom: {} objects, {} synapses", p.manifest.objects.len(), p.manifest.synapses.len());
            write_phantom(stage, &layout.phantom(), &p)
        }
        Stage::Fragment => {
            let p = read_phantom(stage, &layout.phantom())?;
            let d = detach_spines(&p, cfg.fragment.fraction, cfg.fragment.seed, DetachConfig { gap: cfg.fragment.gap });
            log::info!("detached {} spines", d.renamed.len());
            write_phantom(stage, &frag, &d.phantom)?;
            write_json(stage, &layout.renamed(), &d.renamed)
        }
        Stage::Features => {
            let volume = read_volume(&frag.volume).map_err(|e| format_err(stage, e))?;
            let manifest: Manifest<f64> = read_manifest(&frag.manifest).map_err(|e| format_err(stage, e))?;
            let membrane = read_grid(&frag.membrane).map_err(|e| format_err(stage, e))?;
            let truth = read_optional_truth(stage, &frag.truth)?;
            let graph = ObjectAdjacencyGraph::from_volume(&volume, &manifest.objects, Connectivity::Anisotropic);
            let violations = lint_graph(&graph, &cfg.grammar);
            write_text(stage, &layout.lint_text(), &violation_report(&violations))?;
            write_json(stage, &layout.lint_json(), &violations)?;
            let sets = candidate_sets(&volume, &manifest, &cfg.window, &cfg.grammar).map_err(|e| fail(&e))?;
            let rows = feature_rows(&volume, &membrane, &manifest, &sets, truth.as_ref()).map_err(|e| fail(&e))?;
            log::info!("{} orphan spines, {} candidate rows", sets.len(), rows.len());
            write_json(stage, &layout.candidates(), &sets)?;
            let out = File::create(layout.features()).map_err(|e| fail(&e))?;
            write_feature_table(&rows, BufWriter::new(out)).map_err(|e| fail(&e))
        }
        Stage::Train => {
            let rows = read_rows(stage, &layout.features())?;
            let manifest: Manifest<f64> = read_manifest(&frag.manifest).map_err(|e| format_err(stage, e))?;
            let truth: Assignment = read_json(stage, &frag.truth)?;
            let examples = training_examples(&rows, &spine_groups(&manifest, Some(&truth)));
            let model = train_forest(&examples, cfg.forest, cfg.train_seed).map_err(|e| fail(&e))?;
            write_text(stage, &layout.model(), &model.to_json().map_err(|e| fail(&e))?)
        }
        Stage::Score => {
            let rows = read_rows(stage, &layout.features())?;
            let manifest: Manifest<f64> = read_manifest(&frag.manifest).map_err(|e| format_err(stage, e))?;
            let truth = read_optional_truth(stage, &frag.truth)?;
            let examples = training_examples(&rows, &spine_groups(&manifest, truth.as_ref()));
            let scores = match cfg.score_mode {
                ScoreMode::Cv => cross_validated_scores(&examples, cfg.forest, cfg.train_seed).map_err(|e| fail(&e))?,
                ScoreMode::Model => {
                    let text = std::fs::read_to_string(layout.model()).map_err(|e| CliError::data(name, e))?;
                    let model = ForestModel::<f64>::from_json(&text).map_err(|e| CliError::data(name, e))?;
                    score_all(&model, &examples).map_err(|e| fail(&e))?
                }
            };
            let out = File::create(layout.scores()).map_err(|e| fail(&e))?;
            write_scores(&scores, BufWriter::new(out)).map_err(|e| fail(&e))
        }
        Stage::Link => {
            let sets: Vec<CandidateSet> = read_json(stage, &layout.candidates())?;
            let rows = read_rows(stage, &layout.features())?;
            let f = File::open(layout.scores()).map_err(|e| CliError::data(name, e))?;
            let scores = read_scores(BufReader::new(f)).map_err(|e| CliError::data(name, e))?;
            let trees = scored_trees(&sets, &rows, &scores);
            let assignment = assign(&trees).map_err(|e| fail(&e))?;
            write_json(stage, &layout.trees(), &trees)?;
            write_json(stage, &layout.assignment_json(), &assignment)?;
            write_text(stage, &layout.assignment_csv(), &assignment.to_csv())?;
            let ranked: Vec<_> = trees.iter().map(|t| rank(t, usize::MAX)).collect();
            write_text(stage, &layout.ranked(), &ranked_csv(&ranked))
        }
        Stage::Evaluate => {
            let trees: Vec<CandidateTree<f64>> = read_json(stage, &layout.trees())?;
            let manifest: Manifest<f64> = read_manifest(&frag.manifest).map_err(|e| format_err(stage, e))?;
            let truth: Assignment = read_json(stage, &frag.truth)?;
            let report = build_report(&trees, &manifest, &truth, &cfg.ks).map_err(|e| fail(&e))?;
            write_json(stage, &layout.report_json(), &report)?;
            write_text(stage, &layout.report_md(), &report.markdown())?;
            write_text(stage, &layout.topk(), &report.topk_csv())?;
            write_text(stage, &layout.graph_f1(), &report.graph_csv())
        }
        Stage::Simulate => {
            let p = layout.phantom();
            let manifest: Manifest<f64> = read_manifest(&p.manifest).map_err(|e| format_err(stage, e))?;
            let truth: Assignment = read_json(stage, &p.truth)?;
            let ctx = GraphContext { synapses: &manifest.synapses, objects: &manifest.objects, truth: &truth };
            let s = &cfg.simulate;
            let curve = simulate_fragmentation(&ctx, &s.fractions, s.iterations, s.seed).map_err(|e| fail(&e))?;
            write_text(stage, &layout.curve_csv(), &curve.to_csv())?;
            emit_plots(&layout.curve_csv(), &layout.curve_svg(), &layout.curve_plot_json()).map_err(|e| fail(&e))?;
            Ok(())
        }
    }
}

fn hashes(stage: Stage, root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    files
        .iter()
        .filter(|p| p.exists())
        .map(|p| {
            let key = p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned();
            let h = sha256_file(p).map_err(|e| CliError::stage(stage.name(), format!("{}: {e}", p.display())))?;
            Ok((key, h))
        })
        .collect()
}

fn inputs_of(stage: Stage, cfg: &RunConfig, layout: &Layout) -> Vec<PathBuf> {
    let mut v = stage.required_inputs(layout, cfg);
    v.extend(stage.optional_inputs(layout));
    v
}

/// Run `stages` in order, recording hashes and timings in the run manifest.
/// With `resume`, a stage is skipped when the config is unchanged and its
/// recorded inputs and outputs still hash the same.
pub fn execute(stages: &[Stage], cfg: &RunConfig, resume: bool) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let layout = Layout::new(cfg.resolve_data_dir());
    std::fs::create_dir_all(layout.root())
        .map_err(|e| CliError::data("setup", format!("{}: {e}", layout.root().display())))?;
    let previous = RunManifest::load(&layout.run_manifest());
    let same_config = previous.as_ref().is_some_and(|m| &m.config == cfg);
    let mut manifest = previous.clone().unwrap_or_else(|| RunManifest::new(cfg.clone()));
    manifest.config = cfg.clone();
    let save = |m: &RunManifest| {
        m.save(&layout.run_manifest()).map_err(|e| CliError::stage("manifest", format!("{}: {e}", layout.run_manifest().display())))
    };
    for &stage in stages {
        let inputs = inputs_of(stage, cfg, &layout);
        if resume && same_config {
            if let Some(rec) = previous.as_ref().and_then(|m| m.stage(stage.name())) {
                let now_in = hashes(stage, layout.root(), &inputs)?;
                let now_out = hashes(stage, layout.root(), &stage.outputs(&layout))?;
                if now_in == rec.inputs && now_out == rec.outputs && now_out.len() == stage.outputs(&layout).len() {
                    log::info!("{}: up to date", stage.name());
                    manifest.upsert(StageRecord { resumed: true, ..rec.clone() });
                    continue;
                }
            }
        }
        let start = Instant::now();
        log::info!("{}: running", stage.name());
        run_stage(stage, cfg, &layout)?;
        let record = StageRecord {
            name: stage.name().into(),
            inputs: hashes(stage, layout.root(), &inputs)?,
            outputs: hashes(stage, layout.root(), &stage.outputs(&layout))?,
            wall_ms: start.elapsed().as_millis() as u64,
            resumed: false,
        };
        manifest.upsert(record);
        save(&manifest)?;
    }
    save(&manifest)?;
    Ok(manifest)
}
