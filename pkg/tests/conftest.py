import pytest

from cipherdb import Database, KeyBinding, SymKey

KEY_HEX = "6b" * 32

CUSTOMERS = [(123, "Ann", 60520), (124, "Bob", 60520), (125, "Cy", 10001), (126, "Dee", 60520)]
ACCOUNTS = [(123, 1), (123, 2), (124, 3), (125, 4), (125, 5)]

Q1 = "Select C.Name, A.Transactions from Customer C, Account A where C.Id = '123' and C.Id = A.Id"
Q2 = (
    "Select Into Client.CacheDB.CipherTbl AESE (C.Name), AESE (A.Transactions) "
    "from Customer C, Account A where AESE (C.Id) = AESE ('123') and AESE (C.Id) = AESE (A.Id);"
)
Q3 = "Select X.Id, X.Name From Customer as X, Customer as Y Where X.Zip = Y.Zip and X.Id = '123' and Y.Id <> '123'"
Q4 = "Select Sum (Transactions), INT (Var (Transactions)) From Account"


def keys(hex_key=KEY_HEX):
    return KeyBinding({"*": SymKey.from_hex(hex_key)})


def make_bank_db(directory=None, *, id_indexed=False, id_mode="DETERMINISTIC", accounts=ACCOUNTS):
    db = Database(directory)
    idx = " INDEXED" if id_indexed and id_mode == "DETERMINISTIC" else ""
    db.execute(
        f"CREATE TABLE Customer (Id int64 {id_mode}{idx} PRIMARY KEY, Name varchar DETERMINISTIC, "
        "Zip int64 PROBABILISTIC)"
    )
    db.execute(f"CREATE TABLE Account (Id int64 {id_mode}, Transactions int64 PROBABILISTIC)")
    db.insert_rows("Customer", CUSTOMERS, keys())
    db.insert_rows("Account", accounts, keys())
    return db


@pytest.fixture
def bank_db():
    db = make_bank_db()
    yield db
    db.close()


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
