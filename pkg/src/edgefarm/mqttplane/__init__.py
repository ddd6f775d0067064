"""LAN MQTT 3.1.1 data plane: wire codec, topic schema, broker, client."""

from .broker import Broker, BrokerLimits, BrokerServer
from .client import Client
from .codec import (
    Connack,
    Connect,
    Disconnect,
    MqttProtocolError,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    Unsuback,
    Unsubscribe,
    decode_packet,
    decode_varint,
    encode_packet,
    encode_varint,
)
from .topics import (
    PayloadError,
    cmd_topic,
    config_topic,
    event_topic,
    parse_farm_topic,
    status_topic,
    telemetry_topic,
    topic_matches,
    validate_cmd,
    validate_config_update,
    validate_filter,
    validate_node_id,
    validate_topic,
)
from .transport import PipeTransport, TcpTransport, TransportClosed, pipe_pair, tcp_connect
