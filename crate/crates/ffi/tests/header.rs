use std::path::Path;
use std::process::Command;

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/stylecompat.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["sc_model_load", "sc_index_query", "sc_last_error_message", "SC_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not found; skipping"),
        }
    }
}
