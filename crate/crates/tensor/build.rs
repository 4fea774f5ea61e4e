fn main() {
    // CBLAS symbols come from the system OpenBLAS.
    println!("cargo:rustc-link-lib=dylib=openblas");
}
