use std::path::Path;

fn main() {
    match diversigraph_cli::run(std::env::args_os()) {
        Ok(m) => {
            let out = Path::new(&m.config["out"]);
            for f in m
                .outputs
                .iter()
                .map(String::as_str)
                .chain(["manifest.json"])
            {
                println!("{}", out.join(f).display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
