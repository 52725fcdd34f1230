// BLAS/LAPACK symbols come from the system OpenBLAS build, which bundles
// CBLAS and LAPACK in one shared object. Backend selection through the
// *-src crates is deliberately avoided.
fn main() {
    println!("cargo:rustc-link-lib=dylib=openblas");
}
