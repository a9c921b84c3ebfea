//! Regenerates `include/strata.h` from the public items of this crate.

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let header = std::path::Path::new(&crate_dir).join("include").join("strata.h");
    let bindings = cbindgen::generate(&crate_dir).expect("C header generation failed");
    bindings.write_to_file(&header);
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
