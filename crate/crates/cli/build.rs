use std::process::Command;

fn main() {
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let version = env!("CARGO_PKG_VERSION");
    let text = match describe {
        Some(d) => format!("{version} ({d})"),
        None => version.to_string(),
    };
    println!("cargo:rustc-env=SLOTPRICING_DESCRIBE={text}");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
