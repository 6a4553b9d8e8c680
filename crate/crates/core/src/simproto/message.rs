use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// One line of the plugin protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        name: String,
        param_dim: usize,
        obs_dim: usize,
        /// Length of the action vector.
        action_dims: usize,
        protocol_version: u32,
    },
    SimulateRequest {
        id: u64,
        theta: Vec<f64>,
        action: Vec<f64>,
        seed: u64,
    },
    SimulateResponse {
        id: u64,
        observation: Vec<f64>,
        valid: bool,
    },
    /// `id` is absent when the offending line carried none.
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
    Shutdown {},
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line.trim_end())
    }

    /// Best-effort id of a line that failed to parse.
    pub fn salvage_id(line: &str) -> Option<u64> {
        serde_json::from_str::<serde_json::Value>(line).ok()?.get("id")?.as_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_is_stable() {
        let m = Message::SimulateRequest {
            id: 3,
            theta: vec![-3.0, 1.0],
            action: vec![0.5],
            seed: u64::MAX,
        };
        assert_eq!(
            m.to_line(),
            "{\"type\":\"simulate_request\",\"id\":3,\"theta\":[-3.0,1.0],\"action\":[0.5],\"seed\":18446744073709551615}\n"
        );
        assert_eq!(Message::Shutdown {}.to_line(), "{\"type\":\"shutdown\"}\n");
        assert_eq!(Message::parse("{\"type\":\"shutdown\"}").unwrap(), Message::Shutdown {});
    }

    #[test]
    fn floats_round_trip_bitwise() {
        let v = vec![0.1 + 0.2, -1e-300, 12345.678901234567, f64::MIN_POSITIVE];
        let m = Message::SimulateResponse {
            id: 0,
            observation: v.clone(),
            valid: true,
        };
        match Message::parse(&m.to_line()).unwrap() {
            Message::SimulateResponse { observation, .. } => {
                assert!(observation.iter().zip(&v).all(|(a, b)| a.to_bits() == b.to_bits()))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_without_id_and_salvage() {
        let m = Message::parse("{\"type\":\"error\",\"message\":\"bad\"}").unwrap();
        assert_eq!(
            m,
            Message::Error {
                id: None,
                message: "bad".into()
            }
        );
        assert_eq!(Message::salvage_id("{\"id\":7,\"theta\":\"x\"}"), Some(7));
        assert_eq!(Message::salvage_id("not json"), None);
        assert!(Message::parse("{\"type\":\"hello\"}").is_err());
    }
}
