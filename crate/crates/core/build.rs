use std::env;
use std::path::Path;

// ndarray-linalg is used without a bundled backend; link whatever LAPACK the
// system provides. OpenBLAS is preferred because it ships optimized LAPACK
// kernels in the same shared object. Override with e.g.
// PARITYDYN_LAPACK_LIBS="lapack,blas,cblas".
fn main() {
    println!("cargo:rerun-if-env-changed=PARITYDYN_LAPACK_LIBS");
    if let Ok(spec) = env::var("PARITYDYN_LAPACK_LIBS") {
        for lib in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            println!("cargo:rustc-link-lib=dylib={lib}");
        }
        return;
    }

    let search_dirs = [
        "/usr/lib/x86_64-linux-gnu",
        "/usr/lib/aarch64-linux-gnu",
        "/usr/lib64",
        "/usr/lib",
        "/usr/local/lib",
        "/opt/homebrew/lib",
    ];
    let has = |stem: &str| {
        search_dirs.iter().any(|d| {
            Path::new(d).join(format!("lib{stem}.so")).exists()
                || Path::new(d).join(format!("lib{stem}.dylib")).exists()
        })
    };

    if has("openblas") {
        println!("cargo:rustc-link-lib=dylib=openblas");
    } else {
        println!("cargo:rustc-link-lib=dylib=lapack");
        println!("cargo:rustc-link-lib=dylib=blas");
    }
}
