//! `serve-env`: expose a built-in environment over the line protocol.

use std::io::{BufReader, Write};
use std::net::TcpListener;

use anyhow::Result;
use spn_core::env::{builtin, remote::serve};

/// Serves one session over stdin/stdout.
pub fn serve_stdio(env_name: &str) -> Result<()> {
    let mut env = builtin(env_name)?.make()?;
    let stdin = std::io::stdin();
    serve(env.as_mut(), stdin.lock(), std::io::stdout().lock())?;
    Ok(())
}

/// Accepts connections forever, one thread and one environment per
/// connection. The bound address is printed as a JSON line first.
pub fn serve_tcp(env_name: &str, port: u16) -> Result<()> {
    let factory = builtin(env_name)?;
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let mut stdout = std::io::stdout();
    writeln!(
        stdout,
        "{}",
        serde_json::json!({ "listening": listener.local_addr()?.to_string() })
    )?;
    stdout.flush()?;
    std::thread::scope(|scope| -> Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let mut env = factory.make()?;
            scope.spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(e) => return eprintln!("{e}"),
                };
                if let Err(e) = serve(env.as_mut(), reader, stream) {
                    eprintln!("session ended: {e}");
                }
            });
        }
        Ok(())
    })
}
