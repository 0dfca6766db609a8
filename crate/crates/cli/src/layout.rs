use std::path::{Path, PathBuf};

/// File names inside a data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

/// Volume, manifest, membrane and truth files sharing a base name.
#[derive(Debug, Clone)]
pub struct VolumeFiles {
    pub volume: PathBuf,
    pub manifest: PathBuf,
    pub membrane: PathBuf,
    pub truth: PathBuf,
}

impl VolumeFiles {
    pub fn all(&self) -> Vec<PathBuf> {
        vec![self.volume.clone(), self.manifest.clone(), self.membrane.clone(), self.truth.clone()]
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn volume_files(&self, base: &str) -> VolumeFiles {
        VolumeFiles {
            volume: self.file(&format!("{base}.sntg")),
            manifest: self.file(&format!("{base}.manifest.json")),
            membrane: self.file(&format!("{base}.membrane.sntg")),
            truth: self.file(&format!("{base}.truth.json")),
        }
    }

    pub fn phantom(&self) -> VolumeFiles {
        self.volume_files("phantom")
    }

    pub fn fragmented(&self) -> VolumeFiles {
        self.volume_files("fragmented")
    }

    pub fn renamed(&self) -> PathBuf {
        self.file("fragmented.renamed.json")
    }

    pub fn candidates(&self) -> PathBuf {
        self.file("candidates.json")
    }

    pub fn lint_text(&self) -> PathBuf {
        self.file("lint.txt")
    }

    pub fn lint_json(&self) -> PathBuf {
        self.file("lint.json")
    }

    pub fn features(&self) -> PathBuf {
        self.file("features.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.file("model.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.file("scores.csv")
    }

    pub fn trees(&self) -> PathBuf {
        self.file("trees.json")
    }

    pub fn assignment_json(&self) -> PathBuf {
        self.file("assignment.json")
    }

    pub fn assignment_csv(&self) -> PathBuf {
        self.file("assignment.csv")
    }

    pub fn ranked(&self) -> PathBuf {
        self.file("ranked.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.file("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.file("report.md")
    }

    pub fn topk(&self) -> PathBuf {
        self.file("topk.csv")
    }

    pub fn graph_f1(&self) -> PathBuf {
        self.file("graph_f1.csv")
    }

    pub fn curve_csv(&self) -> PathBuf {
        self.file("curve.csv")
    }

    pub fn curve_svg(&self) -> PathBuf {
        self.file("curve.svg")
    }

    pub fn curve_plot_json(&self) -> PathBuf {
        self.file("curve.plot.json")
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.file("run_manifest.json")
    }

    pub fn decision_log(&self) -> PathBuf {
        self.file("decisions.ndjson")
    }
}
