//! Protocol dissection: one log record per message, lossless with respect
//! to the fields the detectors consume.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::sim::message::{DlmsMessage, MsgType, Payload};
use crate::sim::meter::Quantity;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolLogRecord {
    pub timestamp: SimTime,
    pub session_id: String,
    pub msg_type: MsgType,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub meter_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

pub fn dissect(msg: &DlmsMessage) -> ProtocolLogRecord {
    let (quantity, value, unit) = match &msg.payload {
        Some(Payload::Measurement(m)) => (Some(m.quantity), Some(m.value), Some(m.unit.clone())),
        Some(Payload::Quantity(q)) => (Some(*q), None, None),
        _ => (None, None, None),
    };
    ProtocolLogRecord {
        timestamp: msg.timestamp,
        session_id: msg.session_id.clone(),
        msg_type: msg.msg_type,
        src_ip: msg.src_ip,
        dst_ip: msg.dst_ip,
        meter_id: msg.meter_id.clone(),
        quantity,
        value,
        unit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::meter::Measurement;

    fn message(msg_type: MsgType, payload: Option<Payload>) -> DlmsMessage {
        DlmsMessage {
            msg_type,
            session_id: "sess-000001-meter-07".to_string(),
            src_ip: Ipv4Addr::new(10, 0, 0, 7),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            timestamp: SimTime::from_secs(300),
            meter_id: "meter-07".to_string(),
            payload,
        }
    }

    #[test]
    fn read_resp_maps_measurement_fields() {
        let msg = message(
            MsgType::ReadResp,
            Some(Payload::Measurement(Measurement {
                meter_id: "meter-07".to_string(),
                quantity: Quantity::ApparentPower,
                value: 2100.0,
                unit: "VA".to_string(),
                timestamp: SimTime::from_secs(300),
            })),
        );
        let rec = dissect(&msg);
        assert_eq!(rec.quantity, Some(Quantity::ApparentPower));
        assert_eq!(rec.value, Some(2100.0));
        assert_eq!(rec.meter_id, "meter-07");
        assert_eq!(rec.session_id, msg.session_id);
    }

    #[test]
    fn assoc_req_has_no_value() {
        let rec = dissect(&message(
            MsgType::AssocReq,
            Some(Payload::Credential("password".to_string())),
        ));
        assert_eq!(rec.msg_type, MsgType::AssocReq);
        assert_eq!(rec.quantity, None);
        assert_eq!(rec.value, None);
    }

    #[test]
    fn dissection_is_lossless_for_listed_fields() {
        let msg = message(
            MsgType::ReadResp,
            Some(Payload::Measurement(Measurement {
                meter_id: "meter-07".to_string(),
                quantity: Quantity::Voltage,
                value: 229.734,
                unit: "V".to_string(),
                timestamp: SimTime::from_secs(300),
            })),
        );
        let rec = dissect(&msg);
        assert_eq!(rec.timestamp, msg.timestamp);
        assert_eq!(rec.session_id, msg.session_id);
        assert_eq!(rec.msg_type, msg.msg_type);
        assert_eq!(rec.src_ip, msg.src_ip);
        assert_eq!(rec.dst_ip, msg.dst_ip);
        assert_eq!(rec.meter_id, msg.meter_id);
        let m = msg.measurement().unwrap();
        assert_eq!(rec.quantity.unwrap(), m.quantity);
        assert_eq!(rec.value.unwrap().to_bits(), m.value.to_bits());
    }
}
