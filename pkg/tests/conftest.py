from hypothesis import settings

# fixed example generation keeps the suite byte-for-byte repeatable
settings.register_profile("repeatable", derandomize=True, print_blob=True)
settings.load_profile("repeatable")
