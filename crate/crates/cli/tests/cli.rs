mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use seedsplat::io::{cloud, image, splats};
use seedsplat::pipeline::Pipeline;
use seedsplat_cli::commands::{view_file, GenerateManifest, MANIFEST_FILE, SEEDS_FILE, SPLATS_BIN, SPLATS_PLY};

fn seedsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedsplat"))
        .args(args)
        .env_remove("SEEDSPLAT_BUNDLE")
        .env_remove("SEEDSPLAT_PORT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn saved_bundle(dir: &Path) -> (std::path::PathBuf, Pipeline) {
    let p = tiny_pipeline();
    let path = dir.join("bundle.bin");
    p.save(&path).unwrap();
    let img = dir.join("input.png");
    fs::write(&img, input_png()).unwrap();
    (path, p)
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, p) = saved_bundle(dir.path());
    let img = dir.path().join("input.png");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = seedsplat(&["generate", "--image", s(&img), "--bundle", s(&bundle), "--out", s(out), "--views", "4", "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = read_dir_bytes(&a);
    assert_eq!(fa, read_dir_bytes(&b));
    let pngs = fa.iter().filter(|(n, _)| n.ends_with(".png")).count();
    assert_eq!(pngs, 4);

    let m: GenerateManifest = serde_json::from_slice(&fs::read(a.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.gaussian_count, p.cfg.vae.anchors * p.cfg.vae.gaussians_per_anchor);
    assert_eq!(m.seed_count, SEEDS);
    assert_eq!(m.bundle_version, p.version);
    let prims = splats::read_binary(&fs::read(a.join(SPLATS_BIN)).unwrap()).unwrap();
    assert_eq!(prims.len(), m.gaussian_count);
    assert_eq!(splats::read_ply(&fs::read(a.join(SPLATS_PLY)).unwrap()).unwrap().len(), m.gaussian_count);
    let seeds = cloud::read_ply(&fs::read_to_string(a.join(SEEDS_FILE)).unwrap()).unwrap();
    assert_eq!(seeds.len(), SEEDS);
    for (name, bytes) in &fa {
        if name != MANIFEST_FILE {
            assert_eq!(m.files[name], seedsplat_cli::commands::sha256_hex(bytes), "{name}");
        }
    }
    // another seed gives other seeds
    let c = dir.path().join("c");
    let o = seedsplat(&["generate", "--image", s(&img), "--bundle", s(&bundle), "--out", s(&c), "--views", "1", "--seed", "8"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(c.join(SEEDS_FILE)).unwrap(), fs::read(a.join(SEEDS_FILE)).unwrap());
    assert!(c.join(view_file(0)).exists() && !c.join(view_file(1)).exists());
}

#[test]
fn generate_reads_bundle_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = saved_bundle(dir.path());
    let img = dir.path().join("input.png");
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_seedsplat"))
        .args(["generate", "--image", s(&img), "--out", s(&out), "--views", "1"])
        .env("SEEDSPLAT_BUNDLE", &bundle)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = saved_bundle(dir.path());
    let out = dir.path().join("out");

    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not a png").unwrap();
    let o = seedsplat(&["generate", "--image", s(&junk), "--bundle", s(&bundle), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let missing = dir.path().join("missing.png");
    let o = seedsplat(&["generate", "--image", s(&missing), "--bundle", s(&bundle), "--out", s(&out)]);
    assert_eq!(code(&o), 1);

    let o = seedsplat(&["generate", "--image", s(&junk), "--bundle", s(&dir.path().join("nope.bin")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = seedsplat(&["train", "mapper", "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("VAE checkpoint"));
    let o = seedsplat(&["train", "seed", "--vae", s(&dir.path().join("none.ckpt")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    let o = seedsplat(&["generate", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&seedsplat(&["--help"])), 0);

    // a huge learning rate drives the weights to overflow
    let manifest = dir.path().join("manifest.json");
    tiny_manifest(1).save(&manifest).unwrap();
    let mut cfg = tiny_vae_train(5);
    cfg.optimizer.lr = 1e300;
    cfg.optimizer.warmup_steps = 0;
    let cfg_path = dir.path().join("vae.json");
    write_json(&cfg_path, &cfg);
    let o = seedsplat(&["train", "vae", "--config", s(&cfg_path), "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_vae_on_four_objects_reduces_loss_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    tiny_manifest(4).save(&manifest).unwrap();
    let cfg_path = dir.path().join("vae.json");
    let mut cfg = tiny_vae_train(200);
    cfg.manifest = Some("manifest.json".into());
    write_json(&cfg_path, &cfg);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = dir.path().join(r);
            let o = seedsplat(&["train", "vae", "--config", s(&cfg_path), "--out", s(&out), "--seed", "5"]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            assert!(out.join("vae.ckpt").is_file());
            fs::read_to_string(out.join("vae_metrics.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let rows: Vec<Vec<f64>> = runs[0]
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 200);
    let first = rows[0][1];
    let last = rows[199][1];
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn full_chain_train_bundle_generate_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = seedsplat(&["dataset", "--objects", "2", "--seed", "3", "--out", s(&d.join("data"))]);
    assert_eq!(code(&o), 0);
    assert!(d.join("data/object_0001/view_07.png").is_file());

    let manifest = d.join("manifest.json");
    tiny_manifest(2).save(&manifest).unwrap();
    let mut vcfg = tiny_vae_train(5);
    vcfg.manifest = Some(manifest.clone());
    write_json(&d.join("vae.json"), &vcfg);
    write_json(&d.join("seed.json"), &seed_run(3));
    write_json(&d.join("mapper.json"), &mapper_run(3));
    let ck = d.join("ck");
    let run = |args: &[&str]| {
        let o = seedsplat(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["train", "vae", "--config", s(&d.join("vae.json")), "--out", s(&ck)]);
    let vae = ck.join("vae.ckpt");
    run(&["train", "seed", "--config", s(&d.join("seed.json")), "--vae", s(&vae), "--out", s(&ck)]);
    run(&["train", "mapper", "--config", s(&d.join("mapper.json")), "--vae", s(&vae), "--out", s(&ck)]);
    assert_eq!(fs::read_to_string(ck.join("mapper_metrics.csv")).unwrap().lines().count(), 4);
    let bundle = d.join("bundle.bin");
    run(&[
        "bundle",
        "--vae",
        s(&vae),
        "--seed",
        s(&ck.join("seed.ckpt")),
        "--mapper",
        s(&ck.join("mapper.ckpt")),
        "--out",
        s(&bundle),
    ]);
    let p = Pipeline::load(&bundle).unwrap();
    assert_eq!(p.seed_gen.trained_steps, 3);
    assert_eq!(p.cfg.rig, tiny_rig());

    let img = d.join("input.png");
    fs::write(&img, input_png()).unwrap();
    let gen = d.join("gen");
    run(&["--deterministic", "generate", "--image", s(&img), "--bundle", s(&bundle), "--out", s(&gen), "--views", "2"]);
    let rend = d.join("rend");
    run(&["render", "--splats", s(&gen.join(SPLATS_PLY)), "--bundle", s(&bundle), "--views", "2", "--out", s(&rend)]);
    for v in 0..2 {
        let a = image::load_png(gen.join(view_file(v))).unwrap();
        let b = image::load_png(rend.join(view_file(v))).unwrap();
        let diff = a.color.iter().zip(b.color.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // the PLY stores single precision
        assert!(diff <= 2.0 / 255.0, "{diff}");
    }
}

#[test]
fn resumed_training_continues_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = d.join("manifest.json");
    tiny_manifest(1).save(&manifest).unwrap();
    let mut cfg = tiny_vae_train(6);
    cfg.checkpoint_every = 3;
    write_json(&d.join("vae.json"), &cfg);
    let full = d.join("full");
    let o = seedsplat(&["train", "vae", "--config", s(&d.join("vae.json")), "--manifest", s(&manifest), "--out", s(&full)]);
    assert_eq!(code(&o), 0);
    let part = d.join("part");
    fs::create_dir_all(&part).unwrap();
    let lines: Vec<String> = fs::read_to_string(full.join("vae_metrics.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    fs::write(part.join("vae_metrics.csv"), lines[..4].join("\n") + "\n").unwrap();
    let o = seedsplat(&[
        "train",
        "vae",
        "--manifest",
        s(&manifest),
        "--resume",
        s(&full.join("vae_step000003.ckpt")),
        "--out",
        s(&part),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(part.join("vae_metrics.csv")).unwrap(),
        fs::read_to_string(full.join("vae_metrics.csv")).unwrap()
    );
    assert_eq!(fs::read(part.join("vae.ckpt")).unwrap(), fs::read(full.join("vae.ckpt")).unwrap());
}
