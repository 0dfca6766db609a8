pub mod assignment;
pub mod classifier;
pub mod features;
pub mod grammar;
pub mod linker;
pub mod metrics;
pub mod scalar;
pub mod synthgen;
pub mod volume;
pub mod workflow;

pub use scalar::Real;

pub type VoxelResolution = volume::VoxelResolution<f64>;
pub type LabelVolume = volume::LabelVolume<f64>;
pub type ProbabilityGrid = volume::ProbabilityGrid<f64>;
pub type Manifest = volume::Manifest<f64>;
pub type WindowSpec = volume::WindowSpec<f64>;
pub type PhantomConfig = synthgen::PhantomConfig<f64>;
pub type Phantom = synthgen::Phantom<f64>;
pub type FeatureRow = features::FeatureRow<f64>;
pub type TrainingExample = classifier::TrainingExample<f64>;
pub type ForestModel = classifier::ForestModel<f64>;
pub type CandidateTree = linker::CandidateTree<f64>;
pub type RankedCandidates = linker::RankedCandidates<f64>;

pub type LabelVolumeF32 = volume::LabelVolume<f32>;
pub type ProbabilityGridF32 = volume::ProbabilityGrid<f32>;
pub type ForestModelF32 = classifier::ForestModel<f32>;
