//! The four fixture workflows, built from seeded synthetic data and the
//! stand-in executable.
//!
//! 1. `input -> app -> output`: plot three text files.
//! 2. Three independent plot pipelines sharing one application image.
//! 3. One input feeding two regressors, one output each.
//! 4. Separate train and eval inputs feeding two regressors.

use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::SpaceItem;
use crate::error::{Error, Result};
use crate::packager::{build_app_image_from_file, pack_data_dir, pack_empty_output};
use crate::runtime::WorkflowSpec;

pub const DEFAULT_SEED: u64 = 2019;
/// Rows in the synthetic training set.
pub const TRAIN_ROWS: usize = 47;
pub const EVAL_ROWS: usize = 20;
pub const PLOT_ROWS: usize = 25;
/// Neighbours used by the mean-of-k regressor.
pub const KNN_K: usize = 7;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub number: u8,
    pub dir: PathBuf,
    pub spec_path: PathBuf,
    pub spec: WorkflowSpec,
    /// Output component ids, in spec order.
    pub outputs: Vec<String>,
    /// Original files behind each packed image, keyed by image path.
    pub sources: BTreeMap<PathBuf, PathBuf>,
}

impl Scenario {
    pub fn image(&self, component: &str) -> PathBuf {
        self.spec
            .component(component)
            .map(|c| c.image.clone())
            .unwrap_or_default()
    }

    /// Rows for the space benchmark: every input and application image
    /// against the files it was built from.
    pub fn space_items(&self) -> Vec<SpaceItem> {
        self.sources
            .iter()
            .map(|(image, original)| SpaceItem {
                label: image
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                original: original.clone(),
                image: image.clone(),
            })
            .collect()
    }
}

struct AppDef<'a> {
    file: &'a str,
    base: &'a str,
    packages: &'a [&'a str],
    runscript: &'a str,
}

const PLOTTER: AppDef<'static> = AppDef {
    file: "app",
    base: "ubuntu:16.04",
    packages: &["gnuplot"],
    runscript: "gnuplot.sh",
};
const KKNN: AppDef<'static> = AppDef {
    file: "kknn_app",
    base: "r-base:3.6",
    packages: &["kknn"],
    runscript: "kknn.sh",
};
const RF: AppDef<'static> = AppDef {
    file: "rf_app",
    base: "r-base:3.6",
    packages: &["randomForest"],
    runscript: "rf.sh",
};

type Sources = BTreeMap<PathBuf, PathBuf>;

/// Writes the file tree and recipe of an application and builds its image.
/// The recipe sits next to the tree, so the tree holds exactly the files
/// that go into the image.
fn build_app(dir: &Path, def: &AppDef<'_>, standin: &Path, sources: &mut Sources) -> Result<()> {
    let src = dir.join("src").join(def.file);
    fs::create_dir_all(src.join("bin")).map_err(|e| Error::io_at(&src, e))?;
    let bin = src.join("bin/boxi-standin");
    fs::copy(standin, &bin).map_err(|e| Error::io_at(standin, e))?;
    let script = src.join(def.runscript);
    fs::write(
        &script,
        "#!/bin/sh\nexec \"$BOXI_APP_ROOT/bin/boxi-standin\" \"$@\"\n",
    )
    .map_err(|e| Error::io_at(&script, e))?;
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755))
        .map_err(|e| Error::io_at(&script, e))?;

    let mut recipe = format!("[base]\n{}\n\n[packages]\n", def.base);
    for p in def.packages {
        recipe.push_str(p);
        recipe.push('\n');
    }
    recipe.push_str(&format!(
        "\n[files]\n{1}/{0} = {0}\n{1}/bin/boxi-standin = bin/boxi-standin\n\n[environment]\nLC_ALL = C\n\n[runscript]\n{0}\n",
        def.runscript, def.file
    ));
    let recipe_path = dir.join("src").join(format!("{}.recipe", def.file));
    fs::write(&recipe_path, recipe).map_err(|e| Error::io_at(&recipe_path, e))?;
    let image = dir.join(format!("{}.boxi", def.file));
    build_app_image_from_file(&recipe_path, &image)?;
    sources.insert(image, src);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io_at(path, e))
}

/// `rows` lines of `x y` with y a noisy function of x.
fn series(rng: &mut ChaCha8Rng, rows: usize, slope: f64) -> String {
    let mut out = String::new();
    for i in 0..rows {
        let x = i as f64 * 10.0 / rows as f64 + rng.random_range(0.0..0.1);
        let y = slope * x + (x * 1.3).sin() * 2.0 + rng.random_range(-0.5..0.5);
        out.push_str(&format!("{x:.3} {y:.3}\n"));
    }
    out
}

/// Packs `files` into `dir/<stem>/<name>` and then into `<stem>.boxi`.
fn data_image(
    dir: &Path,
    stem: &str,
    name: &str,
    files: &[(&str, String)],
    sources: &mut Sources,
) -> Result<()> {
    let tree = dir.join("data").join(stem).join(name);
    for (file, text) in files {
        write(&tree.join(file), text)?;
    }
    let image = dir.join(format!("{stem}.boxi"));
    pack_data_dir(&tree, &image)?;
    sources.insert(image, tree);
    Ok(())
}

fn output_image(dir: &Path, stem: &str) -> Result<()> {
    pack_empty_output("Outputs", &dir.join(format!("{stem}.boxi")))?;
    Ok(())
}

fn regression_argv(app: &str, train: &str, eval: &str) -> serde_json::Value {
    match app {
        "kknn_app" => serde_json::json!([
            "knn-mean", KNN_K.to_string(), train, eval, "Outputs/predictions.txt"
        ]),
        _ => serde_json::json!(["nn1", train, eval, "Outputs/predictions.txt"]),
    }
}

/// Builds scenario `number` (1 to 4) under `dir`.
pub fn build_scenario(number: u8, dir: &Path, standin: &Path, seed: u64) -> Result<Scenario> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(number as u64));
    let mut sources = Sources::new();
    let doc = match number {
        1 => {
            let files: Vec<(String, String)> = (1..=3)
                .map(|k| (format!("text{k}.txt"), series(&mut rng, PLOT_ROWS, k as f64)))
                .collect();
            let refs: Vec<(&str, String)> =
                files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
            data_image(dir, "input", "Inputs", &refs, &mut sources)?;
            build_app(dir, &PLOTTER, standin, &mut sources)?;
            output_image(dir, "output")?;
            serde_json::json!({
                "label": "scenario-1",
                "components": [
                    {"id": "input", "role": "input", "image": "input.boxi"},
                    {"id": "app", "role": "application", "image": "app.boxi"},
                    {"id": "output", "role": "output", "image": "output.boxi"}],
                "bindings": [
                    {"source": "input:/", "target": "app:/Inputs"},
                    {"source": "app:/Outputs", "target": "output:/Outputs"}],
                "invocations": [{"app": "app", "argv": ["plot", "Inputs", "Outputs"]}]
            })
        }
        2 => {
            build_app(dir, &PLOTTER, standin, &mut sources)?;
            let mut components = Vec::new();
            let mut bindings = Vec::new();
            let mut invocations = Vec::new();
            for k in 1..=3 {
                let text = series(&mut rng, PLOT_ROWS, k as f64);
                data_image(dir, &format!("input{k}"), "Inputs", &[(&format!("text{k}.txt"), text)], &mut sources)?;
                output_image(dir, &format!("output{k}"))?;
                components.push(serde_json::json!(
                    {"id": format!("input{k}"), "role": "input", "image": format!("input{k}.boxi")}));
                components.push(serde_json::json!(
                    {"id": format!("plot{k}"), "role": "application", "image": "app.boxi"}));
                components.push(serde_json::json!(
                    {"id": format!("output{k}"), "role": "output", "image": format!("output{k}.boxi")}));
                bindings.push(serde_json::json!(
                    {"source": format!("input{k}:/"), "target": format!("plot{k}:/Inputs")}));
                bindings.push(serde_json::json!(
                    {"source": format!("plot{k}:/Outputs"), "target": format!("output{k}:/Outputs")}));
                invocations.push(serde_json::json!(
                    {"app": format!("plot{k}"), "argv": ["plot", "Inputs", "Outputs"]}));
            }
            serde_json::json!({
                "label": "scenario-2",
                "components": components,
                "bindings": bindings,
                "invocations": invocations
            })
        }
        3 => {
            let train = series(&mut rng, TRAIN_ROWS, 1.5);
            let eval = series(&mut rng, EVAL_ROWS, 1.5);
            data_image(dir, "input", "Inputs", &[("train.txt", train), ("eval.txt", eval)], &mut sources)?;
            build_app(dir, &KKNN, standin, &mut sources)?;
            build_app(dir, &RF, standin, &mut sources)?;
            output_image(dir, "outputkknn")?;
            output_image(dir, "outputrf")?;
            serde_json::json!({
                "label": "scenario-3",
                "components": [
                    {"id": "input", "role": "input", "image": "input.boxi"},
                    {"id": "kknn_app", "role": "application", "image": "kknn_app.boxi"},
                    {"id": "rf_app", "role": "application", "image": "rf_app.boxi"},
                    {"id": "outputkknn", "role": "output", "image": "outputkknn.boxi"},
                    {"id": "outputrf", "role": "output", "image": "outputrf.boxi"}],
                "bindings": [
                    {"source": "input:/", "target": "kknn_app:/Inputs"},
                    {"source": "input:/", "target": "rf_app:/Inputs"},
                    {"source": "kknn_app:/Outputs", "target": "outputkknn:/Outputs"},
                    {"source": "rf_app:/Outputs", "target": "outputrf:/Outputs"}],
                "invocations": [
                    {"app": "kknn_app", "argv": regression_argv("kknn_app", "Inputs/train.txt", "Inputs/eval.txt")},
                    {"app": "rf_app", "argv": regression_argv("rf_app", "Inputs/train.txt", "Inputs/eval.txt")}]
            })
        }
        4 => {
            let train = series(&mut rng, TRAIN_ROWS, 1.5);
            let eval = series(&mut rng, EVAL_ROWS, 1.5);
            data_image(dir, "train", "Train", &[("train.txt", train)], &mut sources)?;
            data_image(dir, "eval", "Eval", &[("eval.txt", eval)], &mut sources)?;
            build_app(dir, &KKNN, standin, &mut sources)?;
            build_app(dir, &RF, standin, &mut sources)?;
            output_image(dir, "outputkknn")?;
            output_image(dir, "outputrf")?;
            serde_json::json!({
                "label": "scenario-4",
                "components": [
                    {"id": "train", "role": "input", "image": "train.boxi"},
                    {"id": "eval", "role": "input", "image": "eval.boxi"},
                    {"id": "kknn_app", "role": "application", "image": "kknn_app.boxi"},
                    {"id": "rf_app", "role": "application", "image": "rf_app.boxi"},
                    {"id": "outputkknn", "role": "output", "image": "outputkknn.boxi"},
                    {"id": "outputrf", "role": "output", "image": "outputrf.boxi"}],
                "bindings": [
                    {"source": "train:/", "target": "kknn_app:/Train"},
                    {"source": "eval:/", "target": "kknn_app:/Eval"},
                    {"source": "train:/", "target": "rf_app:/Train"},
                    {"source": "eval:/", "target": "rf_app:/Eval"},
                    {"source": "kknn_app:/Outputs", "target": "outputkknn:/Outputs"},
                    {"source": "rf_app:/Outputs", "target": "outputrf:/Outputs"}],
                "invocations": [
                    {"app": "kknn_app", "argv": regression_argv("kknn_app", "Train/train.txt", "Eval/eval.txt")},
                    {"app": "rf_app", "argv": regression_argv("rf_app", "Train/train.txt", "Eval/eval.txt")}]
            })
        }
        n => return Err(Error::InvalidWorkflow(format!("no scenario {n}"))),
    };

    let spec_path = dir.join("workflow.json");
    let text = serde_json::to_string_pretty(&doc).expect("scenario serializes") + "\n";
    write(&spec_path, &text)?;
    let spec = WorkflowSpec::from_file(&spec_path)?;
    spec.validate()?;
    let outputs = spec
        .components
        .iter()
        .filter(|c| c.role == crate::runtime::Role::Output)
        .map(|c| c.id.clone())
        .collect();
    Ok(Scenario {
        number,
        dir: dir.to_path_buf(),
        spec_path,
        spec,
        outputs,
        sources,
    })
}
