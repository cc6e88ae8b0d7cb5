// Clarabel's PSD cone support calls into BLAS/LAPACK. The blas-src/lapack-src
// crates are enabled without a vendored backend, so link the system libraries.
fn main() {
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=blas");
}
