use cite::data::{gen_synthetic, load_dataset, preset, SynthConfig};
use cite::network::{load_model, save_model};
use cite::training::{train, AssignOptions, Assigner};

fn small() -> cite::data::RunConfig {
    let mut cfg = preset("synth").unwrap();
    cfg.max_epochs = 3;
    cfg.embed_dim = 4;
    cfg.synth = SynthConfig { train_images: 40, val_images: 10, test_images: 10, ..SynthConfig::default() };
    cfg
}

#[test]
fn fixed_seed_training_is_byte_identical() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    let mut models = Vec::new();
    for run in 0..2 {
        let ds = gen_synthetic(&cfg.synth).unwrap();
        let enc = ds.encode(cfg.spatial, None).unwrap();
        let assigner = Assigner::build(cfg.assignment, cfg.k, &ds, &AssignOptions::default()).unwrap();
        let out = train(&ds, &enc, &cfg.model_config(enc.region_dim(), enc.phrase_dim()), &cfg.train_config(), &assigner).unwrap();
        let path = dir.path().join(format!("m{run}.bin"));
        save_model(&out.model, &path).unwrap();
        logs.push(out.log.to_csv());
        models.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(models[0], models[1]);

    let reloaded = load_model(dir.path().join("m0.bin")).unwrap();
    let again = dir.path().join("again.bin");
    save_model(&reloaded, &again).unwrap();
    assert_eq!(std::fs::read(again).unwrap(), models[0]);
}

#[test]
fn dataset_files_round_trip() {
    let ds = gen_synthetic(&small().synth).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ds.save(a.path()).unwrap();
    load_dataset(a.path()).unwrap().save(b.path()).unwrap();
    for f in ["region_features.bin", "phrase_features.bin", "annotations.jsonl", "proposals.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
