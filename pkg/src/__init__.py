# UltraSeg package
