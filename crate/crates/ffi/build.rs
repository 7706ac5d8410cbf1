use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").unwrap();
    let out_dir = PathBuf::from(env::var("OUT_DIR").unwrap());
    let header = out_dir.join("hawkes_mca.h");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
            // Keep the checked-in copy current for consumers that vendor the
            // header instead of building the crate.
            let checked_in = PathBuf::from(&crate_dir).join("include").join("hawkes_mca.h");
            if let Some(parent) = checked_in.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            let _ = std::fs::copy(&header, &checked_in);
        }
        Err(err) => {
            println!("cargo:warning=cbindgen failed: {err}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
