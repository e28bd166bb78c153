//! MQTT 3.1.1 subset: QoS 0/1 publish, subscribe, ping, clean sessions only.

pub mod broker;
pub mod codec;
pub mod session;
pub mod topic;

pub use broker::{Broker, BrokerConfig, BrokerOutput, ConnId, HookMessage};
pub use codec::{
    decode, decode_remaining_length, encode, encode_remaining_length, CodecError, Connect, Packet,
    Publish, QoS, SubackReturn, MAX_REMAINING_LENGTH,
};
pub use session::{
    ClientSession, DeliveryFailure, Published, SessionConfig, SessionError, SessionEvent,
    SessionState, TickOutput,
};
pub use topic::TopicFilter;
