//! The batch pipeline without the binary: simulate data files, ingest and
//! preprocess them, then fit and report from a TOML configuration.

use shng::io::{execute, ingest, preprocess, Command, DataPaths, PreprocessConfig, RunConfig, SchemaConfig};

fn main() -> shng::Result<()> {
    let dir = std::env::temp_dir().join("shng-batch-example");
    let sim = RunConfig::from_toml(
        r#"
seed = 11
[model]
variant = "shng"
preset = "SHNG[VIX+Opt]"
data = "vix-opt"
[synthetic]
days = 250
[simulation]
n_paths = 2000
horizon_days = 21
"#,
    )?;
    let m = execute(Command::Simulate, &sim, &dir.join("sim"))?;
    println!("simulate wrote {} files", m.files.len());

    let paths = DataPaths {
        returns: dir.join("sim/returns.csv"),
        vix: Some(dir.join("sim/vix.csv")),
        options: Some(dir.join("sim/options.csv")),
    };
    let raw = ingest(&paths, &SchemaConfig::default())?;
    let pre = preprocess(&raw, &PreprocessConfig::default())?;
    let n: usize = pre.panels.iter().map(|p| p.quotes.len()).sum();
    println!("{} days, {} quotes kept, {} row errors, dropped {:?}", pre.panels.len(), n, raw.errors.len(), pre.dropped);

    let fit = RunConfig::from_toml(&format!(
        r#"
[model]
variant = "shng"
preset = "SHNG[VIX+Opt]"
data = "vix-opt"
[data]
returns = "{}"
vix = "{}"
options = "{}"
[estimation]
evaluate_only = true
[report]
moment_paths = 2000
density_paths = 5000
"#,
        paths.returns.display(),
        paths.vix.as_ref().unwrap().display(),
        paths.options.as_ref().unwrap().display()
    ))?;
    for cmd in [Command::Fit, Command::Report] {
        let m = execute(cmd, &fit, &dir.join(cmd.name()))?;
        println!("{}: {}", cmd.name(), m.files.iter().map(|f| f.0.as_str()).collect::<Vec<_>>().join(", "));
    }
    println!("outputs under {}", dir.display());
    Ok(())
}
