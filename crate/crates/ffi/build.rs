//! Regenerates the committed C header from the exported surface, so the
//! header can never drift from the code.  Generation failures degrade to a
//! build warning instead of breaking consumers that only need the library.

use std::path::Path;

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets the manifest dir");
    let header = Path::new(&crate_dir).join("include").join("metde.h");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            // Rewrites the file only when the contents changed, keeping
            // repeated builds quiet and timestamps stable.
            bindings.write_to_file(&header);
        }
        Err(e) => println!("cargo:warning=skipping C header generation: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
