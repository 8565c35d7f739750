"""Assembling and picking apart voltage mailbox words.

Every voltage change goes through one 64-bit word written to MSR 0x150.
This walkthrough builds a few words by hand and checks the codec catches
payloads the hardware would reject.
"""

from voltlab import (
    MailboxCommand,
    MailboxOp,
    RangeError,
    VoltageDomain,
    VoltageMode,
    decode_mailbox,
    encode_mailbox,
    encode_offset,
)

# ---------------------------------------------------------------------------
# A -100 mV undervolt on the core domain.  Bit 63 marks the transaction,
# the command byte selects a voltage write, and the offset rides in an
# 11-bit two's-complement field in 1 mV steps.

cmd = MailboxCommand(
    VoltageDomain.CORES, MailboxOp.WRITE_VOLTAGE, VoltageMode.OFFSET, offset_mv=-100
)
word = encode_mailbox(cmd)
print(f"-100 mV on cores  -> {word:#018x}")

back = decode_mailbox(word)
print(f"decoded           -> {back.domain.name}, {back.op.name}, {back.offset_mv} mV")
assert back == cmd

# ---------------------------------------------------------------------------
# The shorthand used everywhere else in the package.

for offset in (0, -50, -250, -1024, 1023):
    print(f"offset {offset:+5d} mV   -> {encode_offset(VoltageDomain.CORES, offset):#018x}")

# ---------------------------------------------------------------------------
# Static mode pins an absolute target instead: the field counts 1/1024 V
# units, so 1152 units is 1.125 V.

static = MailboxCommand(
    VoltageDomain.CORES, MailboxOp.WRITE_VOLTAGE, VoltageMode.STATIC, static_units=1152
)
sword = encode_mailbox(static)
print(f"static 1152 units -> {sword:#018x} = {decode_mailbox(sword).static_volts():.4f} V")

# ---------------------------------------------------------------------------
# Out-of-range payloads and malformed words fail loudly rather than
# truncating silently.

for bad_offset in (-1025, 1024):
    try:
        encode_offset(VoltageDomain.CORES, bad_offset)
    except RangeError as exc:
        print(f"rejected: {exc}")

try:
    decode_mailbox(word & ~(1 << 63))  # drop the mandatory transaction bit
except Exception as exc:
    print(f"rejected: {exc}")
