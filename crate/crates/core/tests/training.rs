mod common;

use reflect_sod::config::Config;
use reflect_sod::network::SfcnConfig;
use reflect_sod::training::{AblationPreset, Trainer};
use reflect_sod::Error;

fn small(preset: AblationPreset) -> Config {
    let mut c = common::overfit_config(preset, 1, 3);
    c.model = SfcnConfig {
        input_size: [64, 64],
        ..SfcnConfig::tiny()
    };
    c
}

#[test]
fn concat_only_preset_never_merges() {
    let mut t = Trainer::new(small(AblationPreset::A), common::scene_samples(4, 1)).unwrap();
    t.run(None).unwrap();
    assert_eq!(t.model().hierarchical_merges(), 0);
    let mut t = Trainer::new(small(AblationPreset::B), common::scene_samples(4, 1)).unwrap();
    t.run(None).unwrap();
    assert!(t.model().hierarchical_merges() > 0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut c = small(AblationPreset::Full);
    c.train.base_lr = 0.0;
    let mut t = Trainer::new(c, common::scene_samples(4, 2)).unwrap();
    let before = t.model().params().trainable_vector();
    t.run(None).unwrap();
    assert_eq!(t.model().params().trainable_vector(), before);
    assert_eq!(t.log().len(), 3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small(AblationPreset::Full), common::scene_samples(4, 3)).unwrap();
    t.model_mut().params_mut().shared_convs[0].fill(f64::NAN);
    let err = t.run(Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 1, .. }), "{err}");
    let diag = std::fs::read_to_string(dir.path().join("diagnostic.json")).unwrap();
    assert!(diag.contains("parameter_norms"));
    assert!(!dir.path().join("final.ckpt").exists());
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let samples = common::scene_samples(4, 4);
    let mut c = small(AblationPreset::Full);
    c.train.max_steps = 6;
    let mut whole = Trainer::new(c.clone(), samples.clone()).unwrap();
    whole.run(None).unwrap();

    c.train.max_steps = 3;
    let mut first = Trainer::new(c, samples.clone()).unwrap();
    first.run(None).unwrap();
    let mut ckpt = first.checkpoint();
    ckpt.config_toml = ckpt.config_toml.replace("max_steps = 3", "max_steps = 6");
    let mut rest = Trainer::from_checkpoint(&ckpt, samples).unwrap();
    rest.run(None).unwrap();
    assert_eq!(rest.checkpoint(), whole.checkpoint());
    assert_eq!(rest.log(), &whole.log()[3..]);
}
