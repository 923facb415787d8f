from .core import (
    ADAPTIVE,
    AVERAGE,
    DistributedConfig,
    Master,
    RoundRecord,
    WorkerState,
    WorkerUpdate,
    aggregate,
    make_worker,
    optimal_gamma_dual,
    optimal_gamma_primal,
    partition_for,
    run_distributed,
    worker_epoch,
)
from .transport import (
    InProcessTransport,
    TcpMasterTransport,
    Transport,
    run_tcp_worker,
    spawn_tcp_workers,
)
from .wire import ProtocolError, TransportError
