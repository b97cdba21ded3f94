def ask_proceed(question, default="no", assume_yes=False):
    """Ask a yes/no question via input() and return the answer.

    "default" is the answer on a bare <Enter>: "yes", "no" or None (an answer
    is required). With assume_yes the question is printed and accepted, which
    lets scripted sweeps run unattended.
    """
    valid = {"yes": True, "y": True, "no": False, "n": False}
    prompts = {None: "[y/n]", "yes": "[Y/n]", "no": "[y/N]"}
    if default not in prompts:
        raise ValueError(f"invalid default answer: {default}")

    print(f"{question} {prompts[default]}")
    if assume_yes:
        return True
    while True:
        choice = input().strip().lower()
        if default is not None and choice == "":
            return valid[default]
        if choice in valid:
            return valid[choice]
        print("Please respond with 'yes' or 'no' (or 'y' or 'n').")
