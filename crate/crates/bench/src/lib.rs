//! Shared fixtures for the benchmarks: synthetic leaves, their views, a pair
//! of untrained models and a reference set. Ranking and embedding costs do
//! not depend on the weights, so training is skipped.

use twoview_core::dataset::{LeafSample, Taxonomy};
use twoview_core::hclassifier::{Classifier, ClassifierConfig};
use twoview_core::metricnet::{ModelMeta, SiameseModel, DEFAULT_BACKBONE, DEFAULT_EMBEDDING_DIM};
use twoview_core::pairgen::Grouping;
use twoview_core::preprocess::{View, ViewConfig, ViewPair};
use twoview_core::refstore::{labeled_views, views_of, ReferenceSet};
use twoview_core::synthbench::{generate, SynthSpec};

pub struct Fixture {
    pub spec: SynthSpec,
    pub taxonomy: Taxonomy,
    pub train: Vec<LeafSample>,
    pub train_views: Vec<ViewPair>,
    pub test: Vec<LeafSample>,
    pub test_views: Vec<ViewPair>,
    pub global: SiameseModel,
    pub local: SiameseModel,
    pub refs: ReferenceSet,
}

fn model(view: View, grouping: Grouping, side: u32, backbone: &str) -> SiameseModel {
    let meta = ModelMeta {
        view,
        grouping,
        input_height: side,
        input_width: side,
        embedding_dim: DEFAULT_EMBEDDING_DIM,
        backbone_id: backbone.to_owned(),
    };
    SiameseModel::new(meta, 0).expect("valid model")
}

impl Fixture {
    /// Every training sample of `spec` becomes a reference.
    pub fn new(spec: SynthSpec, backbone: &str) -> Fixture {
        let split = generate(&spec).expect("valid spec");
        let taxonomy = Taxonomy::new(split.taxonomy.clone()).expect("valid taxonomy");
        let cfg = ViewConfig::default();
        let train_refs: Vec<&LeafSample> = split.train.iter().collect();
        let test_refs: Vec<&LeafSample> = split.test.iter().collect();
        let train_views = views_of(&train_refs, &cfg).expect("views");
        let test_views = views_of(&test_refs, &cfg).expect("views");
        let g = train_views[0].global_view.width();
        let global = model(View::Global, Grouping::Genus, g, backbone);
        let local = model(View::Local, Grouping::Species, cfg.crop_size, backbone);
        let labeled = labeled_views(&train_refs, &train_views).expect("labeled");
        let refs = ReferenceSet::build(&labeled, &taxonomy, &global, &local, spec.train_per_species).expect("refs");
        drop(labeled);
        Fixture {
            spec,
            taxonomy,
            train: split.train,
            train_views,
            test: split.test,
            test_views,
            global,
            local,
            refs,
        }
    }

    /// The default benchmark with the default backbone.
    pub fn standard() -> Fixture {
        Fixture::new(SynthSpec::default(), DEFAULT_BACKBONE)
    }

    pub fn classifier(&self) -> Classifier<'_> {
        Classifier::new(&self.global, &self.local, &self.refs, ClassifierConfig::default()).expect("matching models")
    }
}
