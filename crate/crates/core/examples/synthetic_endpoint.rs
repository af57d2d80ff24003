//! Runs the deterministic synthetic model as a local chat-completions
//! endpoint until interrupted, for trying the CLI without a GPU server.
//!
//! ```text
//! cargo run --example synthetic_endpoint
//! DISCHARGE_AUDIT_ENDPOINT=<printed url> discharge-audit record --config <cfg> --recording rec.jsonl
//! ```

use discharge_audit::synthetic::SyntheticServer;

fn main() -> std::io::Result<()> {
    let server = SyntheticServer::start()?;
    println!("{}", server.url());
    eprintln!("synthetic model listening; press Ctrl-C to stop");
    loop {
        std::thread::park();
    }
}
