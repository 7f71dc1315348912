fn main() {
    for (key, var) in [("MULTISAGE_TARGET", "TARGET"), ("MULTISAGE_PROFILE", "PROFILE")] {
        let value = std::env::var(var).unwrap_or_else(|_| "unknown".into());
        println!("cargo:rustc-env={key}={value}");
    }
}
