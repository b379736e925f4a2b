from sqlalchemy import (
    create_engine,
    event,
    Column,
    Integer,
    String,
    Float,
    Boolean,
    ForeignKey,
    DateTime,
    func,
)
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

from config.config import DATABASE_URL, SQL_ECHO

engine = create_engine(DATABASE_URL, echo=SQL_ECHO)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


class Run(Base):
    __tablename__ = "runs"
    run_id = Column(Integer, primary_key=True, index=True)
    config_hash = Column(String, index=True)
    n = Column(Integer, index=True)
    dim = Column(Integer)
    alpha = Column(Float)
    epsilon = Column(Float)
    horizon = Column(Float)
    t_obs = Column(Float, nullable=True)
    gate_violation_time = Column(Float, nullable=True)
    gate_violation_name = Column(String, nullable=True)
    collided = Column(Boolean, default=False)
    bundle_path = Column(String)
    last_updated = Column(
        DateTime,
        default=func.now(),
        onupdate=func.now(),
    )

    # Samples go away with their run
    samples = relationship(
        "DiagnosticSample", back_populates="run", cascade="delete, delete-orphan"
    )


class DiagnosticSample(Base):
    __tablename__ = "diagnostic_samples"
    sample_id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.run_id", ondelete="CASCADE"))
    t = Column(Float)
    R = Column(Float)
    K = Column(Float)
    m = Column(Float)
    Ebar = Column(Float)
    dEbar = Column(Float)
    linf_eps_lo = Column(Float)
    linf_eps_hi = Column(Float)
    linf_eta_lo = Column(Float)
    linf_eta_hi = Column(Float)

    run = relationship("Run", back_populates="samples")


# Touch the run's last_updated column whenever one of its samples changes
def sample_after_update_listener(mapper, connection, target):
    connection.execute(
        Run.__table__.update()
        .where(Run.run_id == target.run_id)
        .values(last_updated=func.now())
    )


event.listen(DiagnosticSample, "after_update", sample_after_update_listener)
