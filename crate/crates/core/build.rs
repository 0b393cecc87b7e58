use std::process::Command;

// Binaries and tests link against the libtorch shipped inside the Python
// torch package; embed its location so they run without LD_LIBRARY_PATH.
fn main() {
    println!("cargo:rerun-if-env-changed=LIBTORCH");
    let lib_dir = match std::env::var("LIBTORCH") {
        Ok(root) => format!("{root}/lib"),
        Err(_) => {
            let python = std::env::var("PYTHON_SYS_EXECUTABLE").unwrap_or_else(|_| "python3".into());
            let out = Command::new(python)
                .args(["-c", "import os, torch; print(os.path.join(os.path.dirname(torch.__file__), 'lib'))"])
                .output()
                .expect("python3 with torch is required to locate libtorch");
            String::from_utf8(out.stdout).unwrap().trim().to_string()
        }
    };
    println!("cargo:rustc-link-arg=-Wl,-rpath,{lib_dir}");
}
