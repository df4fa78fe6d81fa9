//! Edit identities and byte-level determinism of the generate command.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use anyhow::{ensure, Context};
use seedsplat::edit::{edit_pipeline, DragOperation, EditMask, EditRequest, EditSession};
use seedsplat::io::image::encode_png;

use super::shared::{input_image, pipeline};
use super::Outcome;

const SEED: u64 = 7;
const VIEWS: usize = 4;

pub fn identity() -> Outcome {
    let p = pipeline();
    let img = input_image();
    let generated = p.generate(&img, SEED)?;
    let direct = p.render_views(&generated.decoded.primitives, VIEWS)?;
    let session = EditSession::create(p, img, SEED)?;

    let zero = EditRequest {
        ops: vec![],
        mask: None,
        rng_seed: Some(SEED),
        views: (0..VIEWS).collect(),
    };
    let r = edit_pipeline(p, &session, &zero, VIEWS)?;
    ensure!(r.seeds == generated.seeds, "zero-drag seeds differ");
    ensure!(r.z_blend == generated.z_seeds, "zero-drag blended seed latents differ");
    ensure!(r.mapped == generated.mapped, "zero-drag anchor latents differ");
    ensure!(r.decoded == generated.decoded, "zero-drag Gaussians differ");
    ensure!(r.renders == direct, "zero-drag renders differ");

    let s = generated.seeds.len();
    let mut target = generated.seeds[0];
    target[1] += 0.3;
    let drag = EditRequest {
        ops: vec![DragOperation {
            seed_index: 0,
            target,
            falloff: 0.4,
        }],
        mask: Some(EditMask(vec![true; s])),
        rng_seed: Some(SEED),
        views: vec![0],
    };
    let r = edit_pipeline(p, &session, &drag, VIEWS)?;
    ensure!(r.seeds != generated.seeds, "drag did not move any seed");
    ensure!(r.z_blend == generated.z_seeds, "all-true mask did not keep the original seed latents");
    Ok(format!(
        "zero drag reproduces {} Gaussians and {VIEWS} renders bit-exactly; all-true mask keeps all {s} seed latents",
        generated.decoded.primitives.len()
    ))
}

fn tree(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        out.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path())?);
    }
    Ok(out)
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let bundle = dir.path().join("bundle.ssb");
    pipeline().save(&bundle)?;
    let image = dir.path().join("input.png");
    fs::write(&image, encode_png(&input_image())?)?;
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_seedsplat"))
            .arg("generate")
            .arg("--image")
            .arg(&image)
            .arg("--bundle")
            .arg(&bundle)
            .arg("--out")
            .arg(&out)
            .args(["--views", &VIEWS.to_string(), "--seed", &SEED.to_string()])
            .output()
            .context("running the generate command")?;
        ensure!(status.status.success(), "generate failed: {}", String::from_utf8_lossy(&status.stderr));
        runs.push(tree(&out)?);
    }
    ensure!(runs[0].len() >= VIEWS + 3, "only {} artifacts written", runs[0].len());
    let names: Vec<&String> = runs[0].keys().collect();
    ensure!(runs[0].keys().eq(runs[1].keys()), "artifact sets differ: {names:?}");
    for (name, bytes) in &runs[0] {
        ensure!(&runs[1][name] == bytes, "{name} differs between runs");
    }
    let total: usize = runs[0].values().map(Vec::len).sum();
    Ok(format!("two runs wrote {} identical artifacts ({total} bytes)", runs[0].len()))
}
